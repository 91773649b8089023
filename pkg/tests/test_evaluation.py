import hashlib
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from passpilot.agents import SearchBudget, random_search
from passpilot.env import ActionSpace, CompilerEnv, EnvConfig
from passpilot.evaluation import (
    BudgetExceeded,
    Corpus,
    CorpusEntry,
    EvalReport,
    EvalRow,
    NonPositiveCount,
    brute_force_oracle,
    evaluate,
    exact_optimum,
    gap_fraction,
    geomean_reduction,
    split_corpus,
)
from passpilot.synthetic import Rule, SyntheticEffectTable, cost, random_table, smoke_corpus


def synthetic_env(n_actions=5, limit=45):
    names = [f"-p{i}" for i in range(n_actions)]
    return CompilerEnv(EnvConfig(backend="synthetic", action_space=ActionSpace(names),
                                 episode_limit=limit))


# -- geomean --------------------------------------------------------------------

def test_geomean_known_values():
    assert geomean_reduction([2.0, 0.5]) == 1.0
    assert geomean_reduction([500 / 349]) == pytest.approx(1.4327, abs=1e-4)
    assert math.isnan(geomean_reduction([]))


@pytest.mark.parametrize("bad", [[1.0, 0.0], [-1.0], [float("inf")], [float("nan")]])
def test_geomean_rejects_non_positive(bad):
    with pytest.raises(NonPositiveCount):
        geomean_reduction(bad)


ratios = st.lists(st.floats(0.01, 100.0), min_size=1, max_size=20)


@given(ratios, st.randoms(use_true_random=False))
def test_geomean_permutation_invariant(rs, rnd):
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    assert geomean_reduction(shuffled) == pytest.approx(geomean_reduction(rs), rel=1e-12)


@given(ratios, st.floats(0.1, 10.0))
def test_geomean_scales(rs, k):
    assert geomean_reduction([k * r for r in rs]) == pytest.approx(k * geomean_reduction(rs),
                                                                   rel=1e-9)


@given(ratios)
def test_geomean_between_min_and_max(rs):
    g = geomean_reduction(rs)
    assert min(rs) * (1 - 1e-12) <= g <= max(rs) * (1 + 1e-12)


# -- reports ------------------------------------------------------------------

def test_report_csv_and_summary(tmp_path):
    rep = EvalReport([EvalRow("a", 10, 8, 4, [0, 1], 0.5), EvalRow("b", 10, 8, 16, [2], 0.25)])
    s = rep.summary()
    assert s["geomean"] == 1.0 and s["n"] == 2 and not s["empty"]
    csv_path, json_path = rep.write(tmp_path, "r", pass_names=["-x", "-y", "-z"], timing=False)
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("program_id,")
    assert lines[1] == "a,10,8,4,2.000000,0,-x -y"
    assert json.loads(json_path.read_text())["geomean"] == 1.0


def test_empty_report():
    s = EvalReport().summary()
    assert s["empty"] and s["geomean"] is None and s["n"] == 0


def test_evaluate_records_failures_without_raising():
    env = synthetic_env()
    progs = smoke_corpus(3)

    def runner(env, prog, base):
        if prog.name == "smoke01":
            raise RuntimeError("boom")
        return random_search(env, prog, SearchBudget(episodes=2), baseline_count=base)

    rep = evaluate(runner, progs, env)
    assert [r.program_id for r in rep.rows] == ["smoke00", "smoke02"]
    assert rep.failures == [{"index": 1, "error": "RuntimeError: boom"}]


def test_evaluate_parallel_matches_serial():
    progs = smoke_corpus(6)

    def runner(env, prog, base):
        return random_search(env, prog, SearchBudget(episodes=3), seed=1, baseline_count=base)

    serial = evaluate(runner, progs, synthetic_env())
    par = evaluate(runner, progs, synthetic_env, workers=3)
    assert [(r.program_id, r.final_count) for r in serial.rows] == \
        [(r.program_id, r.final_count) for r in par.rows]
    with pytest.raises(TypeError):
        evaluate(runner, progs, synthetic_env(), workers=2)


# -- oracles ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_brute_force_matches_product_enumeration(seed):
    table = random_table(np.random.default_rng(seed), n_actions=4)
    env = synthetic_env(4, limit=4)
    seq, val = brute_force_oracle(env, table, 4)
    c0 = cost(table.initial)
    candidates = [()] + [s for L in range(1, 5) for s in itertools.product(range(4), repeat=L)]
    best = min(candidates, key=lambda s: (cost(table.run(s)), len(s) > 0, s))
    best_cost = cost(table.run(best))
    assert cost(table.run(seq)) == best_cost
    assert val == (c0 - best_cost) / max(c0 - table.baseline_count, 1)
    assert exact_optimum(table, 4) == best_cost


def test_brute_force_needs_enabling_action():
    # action 2 only helps once action 1 has set the enabler counter; action 0 grows
    rules = (
        (Rule((1, 0)),),
        (Rule((0, 1)),),
        (Rule((-5, -1), ((1, 1),)),),
    )
    table = SyntheticEffectTable(rules, (10, 0), 5)
    seq, val = brute_force_oracle(synthetic_env(3, limit=3), table, 3)
    assert seq == [1, 2]
    assert val == 1.0


def test_brute_force_ties_keep_lexicographic_first():
    table = SyntheticEffectTable(((Rule((-1,)),), (Rule((-1,)),)), (5,), 3)
    seq, _ = brute_force_oracle(synthetic_env(2, limit=2), table, 2)
    assert seq == [0, 0]


def test_brute_force_budget_and_backend_guards():
    table = smoke_corpus(1)[0]
    with pytest.raises(BudgetExceeded):
        brute_force_oracle(synthetic_env(), table, 9)
    with pytest.raises(BudgetExceeded):
        brute_force_oracle(synthetic_env(), table, 3, cap=100)
    with pytest.raises(ValueError):
        brute_force_oracle(synthetic_env(limit=2), table, 3)


def test_exact_optimum_never_exceeds_initial():
    for seed in range(10):
        t = random_table(np.random.default_rng(seed))
        assert exact_optimum(t, 6) <= cost(t.initial)
        assert exact_optimum(t, 6) <= exact_optimum(t, 3)


def test_gap_fraction():
    assert gap_fraction(1.5, 1.0, 2.0) == 0.5
    assert math.isnan(gap_fraction(1.0, 2.0, 2.0))


# -- corpora ------------------------------------------------------------------

def make_files(tmp_path, n, dup=0):
    for i in range(n):
        (tmp_path / f"p{i:03d}.ll").write_text(f"define i32 @f{i}() {{\n  ret i32 {i}\n}}\n")
    for j in range(dup):
        (tmp_path / f"z{j:03d}.ll").write_text("define i32 @f0() {\n  ret i32 0\n}\n")


def test_split_corpus_sizes(tmp_path):
    make_files(tmp_path, 120, dup=2)
    corpus = split_corpus(Corpus.from_dir(tmp_path))
    assert len(corpus) == 120      # byte-identical duplicates are dropped
    sizes = {s: len(corpus.split(s)) for s in ("test", "validation", "train")}
    assert sizes == {"test": 50, "validation": 50, "train": 20}


def test_small_corpus_is_all_test(tmp_path):
    make_files(tmp_path, 23)
    corpus = split_corpus(Corpus.from_dir(tmp_path))
    assert len(corpus.split("test")) == 23


def test_split_is_deterministic_and_disjoint(tmp_path):
    make_files(tmp_path, 100)
    a, b = split_corpus(Corpus.from_dir(tmp_path)), split_corpus(Corpus.from_dir(tmp_path))
    assert a.entries == b.entries
    names = [set(e.sha256 for e in a.split(s)) for s in ("test", "validation", "train")]
    assert not (names[0] & names[1]) and sum(map(len, names)) == 100


def test_manifest_roundtrip(tmp_path):
    make_files(tmp_path, 5)
    corpus = split_corpus(Corpus.from_dir(tmp_path))
    corpus.to_manifest(tmp_path / "m.json")
    back = Corpus.from_manifest(tmp_path / "m.json")
    assert back.entries == corpus.entries
    e = back.entries[0]
    assert hashlib.sha256(back.read(e).encode()).hexdigest() == e.sha256


def test_corpus_rejects_duplicates_and_bad_split():
    with pytest.raises(ValueError):
        Corpus("x", [CorpusEntry("a", "h"), CorpusEntry("b", "h")])
    with pytest.raises(ValueError):
        Corpus("x", [CorpusEntry("a", "h", "dev")])
