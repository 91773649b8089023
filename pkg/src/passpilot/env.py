"""Phase-ordering environment: one optimization pass per step.

Two backends implement the same small surface (``load``, ``apply``,
``features``, ``baseline``): :class:`OptBackend` shells out to an LLVM
``opt``-compatible executable; :class:`SyntheticBackend` runs a
:class:`~passpilot.synthetic.SyntheticEffectTable`.
"""
from __future__ import annotations

import hashlib
import os
import shutil
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from passpilot.autophase import N_FEATURES, TOTAL_INSTS, extract_autophase
from passpilot.ir import ParseError, parse_ir
from passpilot.replay import DEFAULT_ALPHA, EpisodeRecord
from passpilot.synthetic import SyntheticEffectTable, synthetic_features

TOOL_ENV_VAR = "PASS_PILOT_OPT"
DEFAULT_EPISODE_LIMIT = 45

# Autophase action space as listed by CompilerGym (index 8 repeats index 7).
AUTOPHASE_PASSES = (
    "-adce", "-break-crit-edges", "-constmerge", "-correlated-propagation", "-deadargelim",
    "-dse", "-early-cse", "-functionattrs", "-functionattrs", "-globaldce", "-globalopt", "-gvn",
    "-indvars", "-inline", "-instcombine", "-ipsccp", "-jump-threading", "-lcssa", "-licm",
    "-loop-deletion", "-loop-idiom", "-loop-reduce", "-loop-rotate", "-loop-simplify",
    "-loop-unroll", "-loop-unswitch", "-lower-expect", "-loweratomic", "-lowerinvoke",
    "-lowerswitch", "-mem2reg", "-memcpyopt", "-partial-inliner", "-prune-eh", "-reassociate",
    "-sccp", "-simplifycfg", "-sink", "-sroa", "-strip", "-strip-nondebug", "-tailcallelim",
)


class BackendError(RuntimeError):
    pass


class EpisodeFinished(RuntimeError):
    pass


class PassFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionSpace:
    pass_names: tuple[str, ...]

    def __init__(self, pass_names: Sequence[str], allow_duplicates: bool = False):
        names = tuple(pass_names)
        if not names:
            raise ValueError("action space needs at least one pass")
        if not allow_duplicates and len(set(names)) != len(names):
            raise ValueError("duplicate pass names in action space")
        object.__setattr__(self, "pass_names", names)

    def __len__(self) -> int:
        return len(self.pass_names)

    @property
    def size(self) -> int:
        return len(self.pass_names)

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.pass_names).encode()).hexdigest()[:16]

    def index(self, name: str) -> int:
        return self.pass_names.index(name)

    @classmethod
    def autophase(cls) -> ActionSpace:
        return cls(AUTOPHASE_PASSES, allow_duplicates=True)

    @classmethod
    def from_file(cls, path: str | Path) -> ActionSpace:
        names = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                names.append(line)
        return cls(names)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.pass_names) + "\n", encoding="utf-8")


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class _OzCache:
    """Baseline counts keyed by program hash; safe to share across threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[tuple[str, str], int] = {}

    def get_or_compute(self, key, compute) -> int:
        with self._lock:
            if key in self._data:
                return self._data[key]
        value = compute()
        with self._lock:
            return self._data.setdefault(key, value)

    def __len__(self):
        return len(self._data)


OZ_CACHE = _OzCache()


def resolve_tool(path: str | None = None) -> str:
    tool = os.environ.get(TOOL_ENV_VAR) or path or shutil.which("opt")
    if not tool:
        raise BackendError(f"no optimizer tool configured (set {TOOL_ENV_VAR})")
    if not (os.path.isfile(tool) and os.access(tool, os.X_OK)):
        raise BackendError(f"optimizer tool {tool!r} is not an executable file")
    return tool


class OptBackend:
    """Runs an ``opt``-style tool: ``tool <flag...> -S <in> -o <out>``."""

    def __init__(self, tool: str | None = None, timeout: float = 60.0, cache: _OzCache = OZ_CACHE):
        self.tool = resolve_tool(tool)
        self.timeout = timeout
        self.cache = cache
        self._tmp = tempfile.TemporaryDirectory(prefix="passpilot-")

    def run(self, text: str, flags: Sequence[str]) -> str:
        d = Path(self._tmp.name)
        src, dst = d / "in.ll", d / "out.ll"
        src.write_text(text, encoding="utf-8")
        if dst.exists():
            dst.unlink()
        try:
            proc = subprocess.run([self.tool, *flags, "-S", str(src), "-o", str(dst)],
                                  capture_output=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise PassFailed(str(exc)) from exc
        if proc.returncode != 0 or not dst.exists():
            raise PassFailed(proc.stderr.decode(errors="replace").strip()[:500])
        return dst.read_text(encoding="utf-8")

    def load(self, program: str):
        return program, extract_autophase(parse_ir(program))

    def apply(self, state, flag: str):
        try:
            text = self.run(state[0], [flag])
            return text, extract_autophase(parse_ir(text))
        except ParseError as exc:
            raise PassFailed(f"unparseable tool output: {exc}") from exc

    @staticmethod
    def features(state) -> np.ndarray:
        return state[1]

    def baseline(self, program: str) -> int:
        return oz_baseline(program, self)


def oz_baseline(program: str, backend: OptBackend) -> int:
    """Instruction count after the tool's ``-Oz`` pipeline, cached by content hash."""

    def compute():
        try:
            out = backend.run(program, ["-Oz"])
        except PassFailed as exc:
            raise BackendError(f"-Oz failed: {exc}") from exc
        return int(extract_autophase(parse_ir(out))[TOTAL_INSTS])

    return backend.cache.get_or_compute((backend.tool, content_hash(program)), compute)


class SyntheticBackend:
    """Backend over a :class:`SyntheticEffectTable`; programs are tables or counter vectors."""

    def __init__(self, table: SyntheticEffectTable | None = None):
        self.table = table
        self._current: SyntheticEffectTable | None = table

    def _table_for(self, program) -> SyntheticEffectTable:
        if isinstance(program, SyntheticEffectTable):
            return program
        if self.table is None:
            raise ValueError("counter-vector programs need a default table")
        init = tuple(int(c) for c in program)
        if len(init) != self.table.k:
            raise ValueError(f"expected {self.table.k} counters, got {len(init)}")
        return self.table.with_initial(init)

    def load(self, program):
        self._current = self._table_for(program)
        return tuple(self._current.initial)

    def apply(self, state, flag_index: int):
        return self._current.apply(state, flag_index)

    @staticmethod
    def features(state) -> np.ndarray:
        return synthetic_features(state)

    def baseline(self, program) -> int:
        return self._table_for(program).baseline_count


@dataclass
class EnvConfig:
    backend: str = "synthetic"              # "opt" or "synthetic"
    action_space: ActionSpace = field(default_factory=ActionSpace.autophase)
    episode_limit: int = DEFAULT_EPISODE_LIMIT
    baseline_mode: str = "provided"         # "oz" or "provided"
    tool: str | None = None
    table: SyntheticEffectTable | None = None

    def __post_init__(self):
        if self.episode_limit < 1:
            raise ValueError("episode_limit must be >= 1")
        if self.backend not in ("opt", "synthetic"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.baseline_mode not in ("oz", "provided"):
            raise ValueError(f"unknown baseline mode {self.baseline_mode!r}")

    def make_backend(self):
        if self.backend == "opt":
            return OptBackend(self.tool)
        return SyntheticBackend(self.table)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def program_id(program) -> str:
    if isinstance(program, SyntheticEffectTable):
        return program.name
    if isinstance(program, str):
        return content_hash(program)[:16]
    return "counters:" + ",".join(str(int(c)) for c in program)


class CompilerEnv:
    """Applies one pass per step and returns normalized observations and rewards.

    ``reward = (C(s_t) - C(s_{t+1})) / max(C(s_0) - C(s_b), 1)`` where ``C`` is
    the instruction count and ``s_b`` the baseline (``-Oz``) result.
    """

    def __init__(self, config: EnvConfig, backend=None):
        self.config = config
        self.backend = backend if backend is not None else config.make_backend()
        self.n_actions = config.action_space.size
        self._state = None
        self._t = 0
        self._active = False

    @property
    def obs_dim(self) -> int:
        return N_FEATURES + self.n_actions

    def reset(self, program, baseline_count: int | None = None) -> np.ndarray:
        self._state = self.backend.load(program)
        feats = self.backend.features(self._state)
        self.initial_count = int(feats[TOTAL_INSTS])
        if baseline_count is not None:
            self.baseline_count = int(baseline_count)
        elif self.config.baseline_mode == "oz" or isinstance(self.backend, SyntheticBackend):
            self.baseline_count = int(self.backend.baseline(program))
        else:
            raise BackendError("baseline_mode='provided' needs an explicit baseline_count")
        self.denominator = max(self.initial_count - self.baseline_count, 1)
        self.count = self.initial_count
        self.histogram = np.zeros(self.n_actions, dtype=np.int64)
        self.program_id = program_id(program)
        self._t = 0
        self._active = True
        return self._observe(feats)

    def _observe(self, feats: np.ndarray) -> np.ndarray:
        scale = 1.0 / max(self.initial_count, 1)
        return np.concatenate([feats * scale, self.histogram / self.config.episode_limit])

    def step(self, action: int) -> StepResult:
        if not self._active:
            raise EpisodeFinished("call reset() before step()")
        if not 0 <= action < self.n_actions:
            raise IndexError(f"action {action} outside [0, {self.n_actions})")
        failed = False
        arg = action if isinstance(self.backend, SyntheticBackend) else \
            self.config.action_space.pass_names[action]
        try:
            self._state = self.backend.apply(self._state, arg)
        except PassFailed:
            failed = True
        feats = self.backend.features(self._state)
        new_count = int(feats[TOTAL_INSTS])
        reward = (self.count - new_count) / self.denominator
        self.count = new_count
        self.histogram[action] += 1
        self._t += 1
        done = self._t >= self.config.episode_limit
        if done:
            self._active = False
        return StepResult(self._observe(feats), reward, done,
                          {"instruction_count": new_count, "pass_failed": failed})

    def snapshot(self):
        """Opaque copy of the episode state, for branching without replaying passes."""
        return (self._state, self.count, self.histogram.copy(), self._t, self._active)

    def restore(self, snap) -> None:
        self._state, self.count, hist, self._t, self._active = snap
        self.histogram = hist.copy()

    @property
    def steps_taken(self) -> int:
        return self._t

    @property
    def ir_text(self) -> str | None:
        return self._state[0] if isinstance(self.backend, OptBackend) else None


def rollout(env: CompilerEnv, program, actions: Sequence[int], alpha: float = DEFAULT_ALPHA,
            baseline_count: int | None = None) -> EpisodeRecord:
    """Reset ``env`` on ``program`` and apply ``actions`` in order."""
    if len(actions) > env.config.episode_limit:
        raise ValueError("more actions than the episode limit")
    obs = [env.reset(program, baseline_count)]
    counts = [env.count]
    rewards = []
    for a in actions:
        res = env.step(int(a))
        obs.append(res.observation)
        rewards.append(res.reward)
        counts.append(res.info["instruction_count"])
    return EpisodeRecord.build(obs, list(actions), rewards, counts, env.program_id, alpha)
