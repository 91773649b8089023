"""Budgeted searches over pass sequences: policy-guided and uniform random."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from passpilot.agents.policies import LatentPolicy, UniformPolicy
from passpilot.env import CompilerEnv


@dataclass(frozen=True)
class SearchBudget:
    """Exactly one of wall-clock seconds, pass applications, or episodes."""

    seconds: float | None = None
    passes: int | None = None
    episodes: int | None = None

    def __post_init__(self):
        active = [x for x in (self.seconds, self.passes, self.episodes) if x is not None]
        if len(active) != 1:
            raise ValueError("SearchBudget needs exactly one of seconds, passes, episodes")
        if active[0] < 0:
            raise ValueError("budget must be non-negative")

    @classmethod
    def parse(cls, text: str) -> SearchBudget:
        """``"30s"``, ``"45p"`` or a bare integer (episodes)."""
        text = text.strip()
        if text.endswith("s"):
            return cls(seconds=float(text[:-1]))
        if text.endswith("p"):
            return cls(passes=int(text[:-1]))
        return cls(episodes=int(text))

    def meter(self) -> _Meter:
        return _Meter(self)


class _Meter:
    def __init__(self, budget: SearchBudget):
        self.budget = budget
        self.t0 = time.monotonic()
        self.passes = 0
        self.episodes = 0

    def exhausted(self) -> bool:
        b = self.budget
        if b.seconds is not None:
            return time.monotonic() - self.t0 >= b.seconds
        if b.passes is not None:
            return self.passes >= b.passes
        return self.episodes >= b.episodes


@dataclass
class SearchResult:
    program_id: str
    sequence: list[int]
    count: int
    initial_count: int
    baseline_count: int
    wall_time: float = 0.0
    episodes: int = 0
    passes: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.baseline_count / self.count if self.count > 0 else float("inf")

    @property
    def value(self) -> float:
        return (self.initial_count - self.count) / max(self.initial_count - self.baseline_count, 1)

    def to_record(self, pass_names=None) -> str:
        seq = [pass_names[a] for a in self.sequence] if pass_names is not None else self.sequence
        return json.dumps({"program": self.program_id, "sequence": seq, "reduction": self.ratio,
                           "wall_time": round(self.wall_time, 6)})


class _Tracker:
    """Keeps the lowest count seen after any prefix of any episode."""

    def __init__(self, env: CompilerEnv):
        self.best_count = env.count
        self.best_seq: list[int] = []

    def see(self, count: int, prefix: list[int]) -> None:
        if count < self.best_count:
            self.best_count = count
            self.best_seq = list(prefix)


def _episode(env, program, policy, mode, rng, meter, tracker, epsilon, baseline_count,
             enforce_budget: bool):
    obs = env.reset(program, baseline_count)
    if isinstance(policy, LatentPolicy):
        policy.reset(obs, rng, mode)
    else:
        policy.reset(obs, rng)
    seq: list[int] = []
    done = False
    while not done:
        if enforce_budget and meter.exhausted():
            break
        a = policy.act(rng, mode)
        if epsilon > 0 and rng.random() < epsilon:
            a = int(rng.integers(env.n_actions))
        res = env.step(a)
        meter.passes += 1
        seq.append(a)
        tracker.see(env.count, seq)
        done = res.done
        if not done:
            policy.update(a, res.observation, rng)
    meter.episodes += 1


def guided_search(env: CompilerEnv, program, policy, budget: SearchBudget, seed: int = 0,
                  epsilon: float = 0.05, baseline_count: int | None = None) -> SearchResult:
    """Best prefix over repeated policy episodes.

    The first episode is the argmax rollout and always runs to completion, so
    the result is never worse than a single deterministic rollout. Later
    episodes sample from the policy with ``epsilon`` uniform substitution.
    """
    rng = np.random.default_rng(seed)
    meter = budget.meter()
    env.reset(program, baseline_count)
    tracker = _Tracker(env)
    _episode(env, program, policy, "argmax", rng, meter, tracker, 0.0, baseline_count, False)
    while not meter.exhausted():
        _episode(env, program, policy, "sample", rng, meter, tracker, epsilon, baseline_count, True)
    return SearchResult(env.program_id, tracker.best_seq, tracker.best_count, env.initial_count,
                        env.baseline_count, time.monotonic() - meter.t0, meter.episodes,
                        meter.passes)


def random_search(env: CompilerEnv, program, budget: SearchBudget, seed: int = 0,
                  baseline_count: int | None = None) -> SearchResult:
    """Uniform random full-length episodes until the budget runs out; first trial always runs."""
    rng = np.random.default_rng(seed)
    meter = budget.meter()
    env.reset(program, baseline_count)
    tracker = _Tracker(env)
    policy = UniformPolicy(env.n_actions)
    first = True
    while first or not meter.exhausted():
        _episode(env, program, policy, "sample", rng, meter, tracker, 0.0, baseline_count,
                 not first)
        first = False
    return SearchResult(env.program_id, tracker.best_seq, tracker.best_count, env.initial_count,
                        env.baseline_count, time.monotonic() - meter.t0, meter.episodes,
                        meter.passes)
