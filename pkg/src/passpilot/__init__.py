"""Learned pass ordering for LLVM IR code-size reduction."""
from passpilot.autophase import FEATURE_NAMES, extract_autophase, instruction_count
from passpilot.env import ActionSpace, CompilerEnv, EnvConfig, rollout
from passpilot.ir import ParseError, parse_ir
from passpilot.replay import EpisodeRecord, ReplayBuffer, smooth_rewards
from passpilot.world_model import WorldModel, WorldModelConfig

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES", "ActionSpace", "CompilerEnv", "EnvConfig", "EpisodeRecord", "ParseError",
    "ReplayBuffer", "WorldModel", "WorldModelConfig", "extract_autophase", "instruction_count",
    "parse_ir", "rollout", "smooth_rewards",
]
