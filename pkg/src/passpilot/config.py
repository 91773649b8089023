"""Run configuration: one JSON document, desk or full-scale ("paper") presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from passpilot.agents.actor_critic import AgentConfig
from passpilot.env import ActionSpace, EnvConfig
from passpilot.synthetic import SMOKE_PASS_NAMES, smoke_corpus
from passpilot.training import TrainConfig
from passpilot.world_model import WorldModelConfig

PRESETS = ("desk", "paper")


@dataclass
class EnvSection:
    backend: str = "synthetic"
    tool: str | None = None
    action_space_file: str | None = None   # None: smoke passes (synthetic) or autophase (opt)
    episode_limit: int = 45

    def action_space(self, base: Path | None = None) -> ActionSpace:
        if self.action_space_file:
            p = Path(self.action_space_file)
            if base is not None and not p.is_absolute():
                p = base / p
            return ActionSpace.from_file(p)
        if self.backend == "synthetic":
            return ActionSpace(SMOKE_PASS_NAMES)
        return ActionSpace.autophase()

    def env_config(self, base: Path | None = None) -> EnvConfig:
        return EnvConfig(backend=self.backend, action_space=self.action_space(base),
                         episode_limit=self.episode_limit,
                         baseline_mode="oz" if self.backend == "opt" else "provided",
                         tool=self.tool)


@dataclass
class CorpusSection:
    manifest: str | None = None        # corpus manifest for the opt backend
    synthetic_programs: int = 10       # smoke corpus size for the synthetic backend
    synthetic_seed: int = 0
    split: str = "train"               # manifest split used for training ("all" for every entry)


def _desk_agent() -> AgentConfig:
    return AgentConfig(lr=1e-4)


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    output_dir: str = "runs/default"
    env: EnvSection = field(default_factory=EnvSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    agent: AgentConfig = field(default_factory=_desk_agent)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}")

    @classmethod
    def from_preset(cls, preset: str = "desk", **kw) -> RunConfig:
        if preset == "paper":
            kw.setdefault("world_model", WorldModelConfig.paper())
            kw.setdefault("agent", AgentConfig())
        return cls(preset=preset, **kw)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        preset = data.pop("preset", "desk")
        base = cls.from_preset(preset)
        sections = {"env": EnvSection, "corpus": CorpusSection, "world_model": WorldModelConfig,
                    "agent": AgentConfig, "train": TrainConfig}
        kw = {}
        for name, typ in sections.items():
            current = asdict(getattr(base, name))
            override = data.pop(name, {}) or {}
            unknown = set(override) - {f.name for f in fields(typ)}
            if unknown:
                raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
            if name == "world_model" and "scales" in override:
                override = dict(override, scales=dict(current["scales"], **override["scales"]))
            current.update(override)
            kw[name] = typ(**current)
        unknown = set(data) - {"seed", "output_dir"}
        if unknown:
            raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
        return cls(preset=preset, seed=data.get("seed", base.seed),
                   output_dir=data.get("output_dir", base.output_dir), **kw)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def train_config(self) -> TrainConfig:
        t = TrainConfig(**asdict(self.train))
        t.seed = self.seed
        return t


def load_programs(cfg: RunConfig, base: Path | None = None, split: str | None = None):
    """Programs and their baselines (None means computed by the backend)."""
    from passpilot.evaluation import Corpus

    if cfg.env.backend == "synthetic":
        progs = smoke_corpus(cfg.corpus.synthetic_programs, cfg.corpus.synthetic_seed)
        return progs, None
    if not cfg.corpus.manifest:
        raise ValueError("the opt backend needs corpus.manifest")
    p = Path(cfg.corpus.manifest)
    if base is not None and not p.is_absolute():
        p = base / p
    corpus = Corpus.from_manifest(p)
    want = split or cfg.corpus.split
    entries = corpus.entries if want == "all" else corpus.split(want)
    return [corpus.read(e) for e in entries], None
