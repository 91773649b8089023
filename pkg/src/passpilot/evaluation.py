"""Reduction metrics, corpus handling, exhaustive oracles and reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from passpilot.env import CompilerEnv, SyntheticBackend
from passpilot.synthetic import SyntheticEffectTable, cost


class NonPositiveCount(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


def geomean_reduction(ratios: Iterable[float]) -> float:
    """``exp(mean(log ratio))``; above 1 means smaller than the baseline on average."""
    r = np.asarray(list(ratios), dtype=np.float64)
    if r.size == 0:
        return float("nan")
    if np.any(~(r > 0)) or np.any(~np.isfinite(r)):
        raise NonPositiveCount("every ratio must be a positive finite number")
    return float(np.exp(np.mean(np.log(r))))


# ---------------------------------------------------------------------------
# reports

CSV_HEADER = ("program_id", "initial_count", "oz_count", "final_count", "ratio", "wall_time_s",
              "sequence")


@dataclass
class EvalRow:
    program_id: str
    initial_count: int
    oz_count: int
    final_count: int
    sequence: list[int]
    wall_time_s: float = 0.0

    @property
    def ratio(self) -> float:
        if self.final_count <= 0:
            raise NonPositiveCount(f"{self.program_id}: final count {self.final_count}")
        return self.oz_count / self.final_count


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    label: str = ""

    @property
    def ratios(self) -> list[float]:
        return [r.ratio for r in self.rows]

    def summary(self) -> dict:
        rs = self.ratios
        return {
            "geomean": geomean_reduction(rs) if rs else None,
            "min": min(rs) if rs else None,
            "max": max(rs) if rs else None,
            "n": len(rs),
            "failures": len(self.failures),
            "empty": not rs,
        }

    def to_csv(self, pass_names=None, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            seq = " ".join(pass_names[a] for a in r.sequence) if pass_names is not None \
                else " ".join(map(str, r.sequence))
            w.writerow([r.program_id, r.initial_count, r.oz_count, r.final_count,
                        f"{r.ratio:.6f}", f"{r.wall_time_s:.3f}" if timing else "0", seq])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str = "report", pass_names=None,
              timing: bool = True) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.summary.json"
        csv_path.write_text(self.to_csv(pass_names, timing), encoding="utf-8")
        summ = self.summary()
        summ["failure_detail"] = self.failures
        json_path.write_text(json.dumps(summ, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return csv_path, json_path


def _evaluate_one(runner, env: CompilerEnv, prog, base):
    t0 = time.monotonic()
    out = runner(env, prog, base)
    if hasattr(out, "counts"):
        final, seq = int(out.counts[-1]), [int(a) for a in out.actions]
    else:
        final, seq = int(out.count), list(out.sequence)
    if final <= 0 or env.baseline_count <= 0:
        raise NonPositiveCount(f"non-positive count (final {final}, baseline {env.baseline_count})")
    return EvalRow(env.program_id, env.initial_count, env.baseline_count, final, seq,
                   time.monotonic() - t0)


def evaluate(runner: Callable, programs, env, baselines=None, label: str = "",
             workers: int = 1) -> EvalReport:
    """Run ``runner(env, program, baseline)`` once per program.

    ``runner`` returns either a ``SearchResult`` (``count``/``sequence``) or an
    ``EpisodeRecord`` (final count and full action list). Failures are
    recorded rather than raised. With ``workers > 1``, ``env`` must be a
    zero-argument factory; each worker thread builds its own environment.
    """
    programs = list(programs)
    bases = [None] * len(programs) if baselines is None else list(baselines)

    def task(i, local_env):
        try:
            return _evaluate_one(runner, local_env, programs[i], bases[i])
        except Exception as exc:  # noqa: BLE001 - reported, never fatal
            return {"index": i, "error": f"{type(exc).__name__}: {exc}"}

    if workers > 1:
        if not callable(env) or isinstance(env, CompilerEnv):
            raise TypeError("parallel evaluation needs an environment factory")
        local = threading.local()

        def run(i):
            if not hasattr(local, "env"):
                local.env = env()
            return task(i, local.env)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(programs))))
    else:
        single = env() if not isinstance(env, CompilerEnv) else env
        results = [task(i, single) for i in range(len(programs))]
    report = EvalReport(label=label)
    for r in results:
        (report.failures if isinstance(r, dict) else report.rows).append(r)
    return report


# ---------------------------------------------------------------------------
# oracles

def brute_force_oracle(env: CompilerEnv, program, max_len: int, cap: int = 10**6,
                       baseline_count: int | None = None,
                       allow_real_backend: bool = False) -> tuple[list[int], float]:
    """Exhaustive search over all sequences of length <= ``max_len``.

    Returns the lexicographically first sequence with the highest normalized
    improvement. Enumeration is depth-first, so prefixes are visited before
    their extensions and ties keep the earlier sequence.
    """
    if not isinstance(env.backend, SyntheticBackend) and not allow_real_backend:
        raise BudgetExceeded("exhaustive search on a real backend needs allow_real_backend=True")
    A = env.n_actions
    if A ** max_len > cap:
        raise BudgetExceeded(f"{A}^{max_len} sequences exceed the cap of {cap}")
    if max_len > env.config.episode_limit:
        raise ValueError("max_len exceeds the episode limit")
    env.reset(program, baseline_count)
    c0, denom = env.initial_count, env.denominator
    best = [c0, []]
    prefix: list[int] = []

    def dfs(depth):
        if depth == max_len:
            return
        snap = env.snapshot()
        for a in range(A):
            env.restore(snap)
            env.step(a)
            prefix.append(a)
            if env.count < best[0]:
                best[0], best[1] = env.count, list(prefix)
            dfs(depth + 1)
            prefix.pop()
        env.restore(snap)

    dfs(0)
    return best[1], (c0 - best[0]) / denom


def exact_optimum(table: SyntheticEffectTable, horizon: int) -> int:
    """Lowest cost reachable within ``horizon`` steps, by breadth-first search over states."""
    frontier = {tuple(table.initial)}
    seen = set(frontier)
    best = cost(table.initial)
    for _ in range(horizon):
        nxt = set()
        for s in frontier:
            for a in range(table.n_actions):
                t = table.apply(s, a)
                if t not in seen:
                    seen.add(t)
                    nxt.add(t)
        if not nxt:
            break
        best = min(best, min(cost(s) for s in nxt))
        frontier = nxt
    return best


# ---------------------------------------------------------------------------
# corpora

SPLITS = ("train", "validation", "test")


@dataclass
class CorpusEntry:
    path: str
    sha256: str
    split: str = "test"


@dataclass
class Corpus:
    name: str
    entries: list[CorpusEntry] = field(default_factory=list)

    def __post_init__(self):
        hashes = [e.sha256 for e in self.entries]
        if len(set(hashes)) != len(hashes):
            raise ValueError("corpus contains duplicate programs")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r}")

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == name]

    def read(self, entry: CorpusEntry, root: str | Path | None = None) -> str:
        p = Path(entry.path)
        if root is not None and not p.is_absolute():
            p = Path(root) / p
        return p.read_text(encoding="utf-8")

    @classmethod
    def from_dir(cls, directory: str | Path, pattern: str = "*.ll", name: str | None = None) -> Corpus:
        d = Path(directory)
        entries, seen = [], set()
        for p in sorted(d.glob(pattern), key=lambda q: q.name):
            h = hashlib.sha256(p.read_bytes()).hexdigest()
            if h in seen:
                continue
            seen.add(h)
            entries.append(CorpusEntry(str(p), h))
        return cls(name or d.name, entries)

    @classmethod
    def from_manifest(cls, path: str | Path) -> Corpus:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            name, items = data.get("name", Path(path).stem), data.get("programs", [])
        else:
            name, items = Path(path).stem, data
        base = Path(path).parent
        entries = []
        for it in items:
            p = Path(it["path"])
            if not p.is_absolute():
                p = base / p
            entries.append(CorpusEntry(str(p), it["sha256"], it.get("split", "test")))
        return cls(name, entries)

    def to_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps([asdict(e) for e in self.entries], indent=2) + "\n",
                              encoding="utf-8")


def split_corpus(corpus: Corpus, n_test: int = 50, n_validation: int = 50) -> Corpus:
    """Tag programs in name order: test first, validation next, train after.

    Corpora smaller than ``n_test + n_validation`` go entirely to test.
    """
    entries = sorted(corpus.entries, key=lambda e: Path(e.path).name)
    small = len(entries) < n_test + n_validation
    tagged = []
    for i, e in enumerate(entries):
        if small or i < n_test:
            split = "test"
        elif i < n_test + n_validation:
            split = "validation"
        else:
            split = "train"
        tagged.append(CorpusEntry(e.path, e.sha256, split))
    return Corpus(corpus.name, tagged)


def gap_fraction(agent: float, random: float, oracle: float) -> float:
    """Fraction of the (oracle - random) gap closed by ``agent``; nan if no gap."""
    gap = oracle - random
    return (agent - random) / gap if gap > 0 else math.nan
