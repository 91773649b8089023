"""Deterministic counter-based stand-in for a compiler.

A program is a small vector of non-negative counters; each action is a list
of guarded rules that add a delta (floored at zero) when every guard holds.
Cost is the counter sum. Because transitions are exact and cheap, every
downstream component can be checked against exhaustive enumeration.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from passpilot.autophase import N_FEATURES, TOTAL_INSTS


@dataclass(frozen=True)
class Rule:
    delta: tuple[int, ...]
    # all (counter index, minimum value) pairs must hold for the rule to fire
    guards: tuple[tuple[int, int], ...] = ()

    def fires(self, state: tuple[int, ...]) -> bool:
        return all(state[i] >= lo for i, lo in self.guards)


@dataclass(frozen=True)
class SyntheticEffectTable:
    rules: tuple[tuple[Rule, ...], ...]  # one rule list per action
    initial: tuple[int, ...]
    baseline_count: int
    name: str = "synthetic"

    @property
    def k(self) -> int:
        return len(self.initial)

    @property
    def n_actions(self) -> int:
        return len(self.rules)

    def __post_init__(self):
        if any(c < 0 for c in self.initial):
            raise ValueError("initial counters must be non-negative")
        if self.k + 1 > N_FEATURES:
            raise ValueError(f"at most {N_FEATURES - 1} counters fit the feature layout")
        for rules in self.rules:
            for r in rules:
                if len(r.delta) != self.k:
                    raise ValueError("rule delta has wrong dimension")

    def apply(self, state: tuple[int, ...], action: int) -> tuple[int, ...]:
        s = list(state)
        for rule in self.rules[action]:
            if rule.fires(tuple(s)):
                s = [max(0, a + d) for a, d in zip(s, rule.delta)]
        return tuple(s)

    def run(self, actions, state=None) -> tuple[int, ...]:
        s = tuple(self.initial) if state is None else tuple(state)
        for a in actions:
            s = self.apply(s, a)
        return s

    def with_initial(self, initial, baseline_count: int | None = None, name: str | None = None):
        return replace(self, initial=tuple(int(c) for c in initial),
                       baseline_count=self.baseline_count if baseline_count is None else baseline_count,
                       name=self.name if name is None else name)


def cost(state) -> int:
    return int(sum(state))


def synthetic_features(state) -> np.ndarray:
    """Place counters in the first k slots and their sum in the TotalInsts slot."""
    f = np.zeros(N_FEATURES, dtype=np.int64)
    f[:len(state)] = state
    f[TOTAL_INSTS] = sum(state)
    return f


# ---------------------------------------------------------------------------
# generators

SMOKE_PASS_NAMES = ("-cleanup", "-promote", "-enable", "-fold", "-inline")
SMOKE_BASELINE_SEQUENCE = (1, 1, 1, 1, 0, 0, 0, 0)


def smoke_rules() -> tuple[tuple[Rule, ...], ...]:
    """Five actions over counters (code, memory, enabler).

    ``-fold`` only pays off after ``-enable``; ``-inline`` grows the program.
    ``-cleanup`` and ``-fold`` never drive the code counter below one, so the
    cost never reaches zero.
    """
    return (
        (Rule((-1, 0, 0), ((0, 2),)),),                 # cleanup
        (Rule((1, -3, 0), ((1, 3),)),),                 # promote memory to code
        (Rule((0, 0, 1)),),                             # enable
        (Rule((-4, 0, -1), ((2, 1), (0, 5))),),         # fold
        (Rule((3, 1, 0)),),                             # inline
    )


def smoke_corpus(n_programs: int = 10, seed: int = 0) -> list[SyntheticEffectTable]:
    rng = np.random.default_rng(seed)
    rules = smoke_rules()
    out = []
    for i in range(n_programs):
        init = (int(rng.integers(6, 17)), int(rng.integers(3, 13)), 0)
        base = SyntheticEffectTable(rules, init, 0)
        oz = cost(base.run(SMOKE_BASELINE_SEQUENCE))
        out.append(base.with_initial(init, baseline_count=oz, name=f"smoke{i:02d}"))
    return out


def random_table(rng: np.random.Generator, k: int = 3, n_actions: int = 5,
                 max_rules: int = 2, init_range: tuple[int, int] = (3, 12)) -> SyntheticEffectTable:
    """A random table with mostly-shrinking rules, some guarded on other counters."""
    actions = []
    for _ in range(n_actions):
        rules = []
        for _ in range(int(rng.integers(1, max_rules + 1))):
            delta = tuple(int(d) for d in rng.integers(-3, 3, size=k))
            guards: tuple[tuple[int, int], ...] = ()
            if rng.random() < 0.6:
                guards = ((int(rng.integers(0, k)), int(rng.integers(1, 6))),)
            rules.append(Rule(delta, guards))
        actions.append(tuple(rules))
    init = tuple(int(c) for c in rng.integers(init_range[0], init_range[1] + 1, size=k))
    baseline = max(0, cost(init) - int(rng.integers(0, 6)))
    return SyntheticEffectTable(tuple(actions), init, baseline, name="random")

