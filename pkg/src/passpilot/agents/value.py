"""Value prediction over candidate sequences and core-set selection."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from passpilot.agents.search import SearchResult
from passpilot.env import ActionSpace, CompilerEnv


def sequence_value(initial_count: int, final_count: int, baseline_count: int) -> float:
    """Normalized improvement ``(C0 - Cm) / (C0 - Cb)``, denominator floored at 1."""
    return (initial_count - final_count) / max(initial_count - baseline_count, 1)


def value_predict(model, obs0, seq: Sequence[int]) -> float:
    """Sum of per-step reward predictions along ``seq`` from ``obs0``.

    ``model`` needs ``predict_rewards(obs0, actions)``; a trained world model
    and :class:`OracleSimulator` both qualify.
    """
    if len(seq) == 0:
        return 0.0
    return float(np.sum(model.predict_rewards(obs0, list(seq))))


class OracleSimulator:
    """Stands in for a world model by executing the real environment."""

    def __init__(self, env: CompilerEnv, program, baseline_count: int | None = None):
        self.env, self.program, self.baseline_count = env, program, baseline_count

    def predict_rewards(self, obs0, actions) -> np.ndarray:
        self.env.reset(self.program, self.baseline_count)
        return np.array([self.env.step(int(a)).reward for a in actions], dtype=np.float64)


@dataclass
class CoreSet:
    sequences: list[tuple[int, ...]]

    def __post_init__(self):
        self.sequences = [tuple(int(a) for a in s) for s in self.sequences]
        if any(len(s) == 0 for s in self.sequences):
            raise ValueError("core-set sequences must be non-empty")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def total_passes(self) -> int:
        return sum(len(s) for s in self.sequences)

    def validate(self, space: ActionSpace | int) -> None:
        n = space if isinstance(space, int) else space.size
        for s in self.sequences:
            if any(not 0 <= a < n for a in s):
                raise ValueError(f"core-set sequence {s} has an index outside [0, {n})")

    @classmethod
    def from_file(cls, path: str | Path, space: ActionSpace) -> CoreSet:
        """One sequence per line; comma-separated indices or pass names."""
        seqs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            seq = []
            for tok in (t.strip() for t in line.split(",")):
                if tok.isdigit():
                    seq.append(int(tok))
                else:
                    try:
                        seq.append(space.index(tok))
                    except ValueError:
                        raise ValueError(f"unknown pass {tok!r} in core-set file") from None
            seqs.append(tuple(seq))
        cs = cls(seqs)
        cs.validate(space)
        return cs

    def to_file(self, path: str | Path, space: ActionSpace | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.sequences:
                toks = [space.pass_names[a] for a in s] if space is not None else map(str, s)
                fh.write(",".join(toks) + "\n")


def coreset_select(env: CompilerEnv, program, coreset: CoreSet, model, budget: int = 45,
                   baseline_count: int | None = None) -> SearchResult:
    """Rank sequences by predicted value, then validate them in the real environment.

    Top-ranked sequences run in order, the IR reset before each, until
    ``budget`` pass applications are spent. The best prefix seen wins.
    """
    t0 = time.monotonic()
    obs0 = env.reset(program, baseline_count)
    c0, cb = env.initial_count, env.baseline_count
    scores = np.array([value_predict(model, obs0, s) for s in coreset.sequences])
    order = sorted(range(len(coreset)), key=lambda i: (-scores[i], i))
    best_count, best_seq = c0, []
    used = 0
    for i in order:
        if used >= budget:
            break
        env.reset(program, baseline_count)
        seq = coreset.sequences[i]
        for j, a in enumerate(seq):
            if used >= budget:
                break
            env.step(a)
            used += 1
            if env.count < best_count:
                best_count, best_seq = env.count, list(seq[:j + 1])
    return SearchResult(env.program_id, best_seq, best_count, c0, cb, time.monotonic() - t0,
                        passes=used, extra={"scores": scores.tolist()})


def greedy_coreset(env: CompilerEnv, programs, max_len: int | None = None,
                   max_sequences: int = 50, baseline_count=None) -> CoreSet:
    """Placeholder core set: one greedy sequence per program, deduplicated.

    At each step every action is tried from the current state and the one
    with the lowest count is kept; the sequence stops when nothing improves.
    """
    limit = env.config.episode_limit if max_len is None else max_len
    seqs: list[tuple[int, ...]] = []
    for prog in programs:
        env.reset(prog, baseline_count)
        seq: list[int] = []
        while len(seq) < limit:
            snap = env.snapshot()
            best_a, best_c = None, env.count
            for a in range(env.n_actions):
                env.restore(snap)
                env.step(a)
                if env.count < best_c:
                    best_a, best_c = a, env.count
            env.restore(snap)
            if best_a is None:
                break
            env.step(best_a)
            seq.append(best_a)
        if seq and tuple(seq) not in seqs:
            seqs.append(tuple(seq))
        if len(seqs) >= max_sequences:
            break
    if not seqs:
        seqs = [(0,)]
    return CoreSet(seqs)
