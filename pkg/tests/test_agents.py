import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from passpilot.agents import (
    ActorCritic,
    AgentConfig,
    CoreSet,
    LatentPolicy,
    OracleSimulator,
    SearchBudget,
    UniformPolicy,
    actor_loss,
    coreset_select,
    critic_loss,
    guided_search,
    lambda_returns,
    policy_rollout,
    random_search,
    sequence_value,
    value_predict,
)
from passpilot.autodiff.gradcheck import check_params, max_rel_error
from passpilot.autodiff.nn import adam_step
from passpilot.autodiff.tensor import Tensor
from passpilot.env import ActionSpace, CompilerEnv, EnvConfig
from passpilot.evaluation import brute_force_oracle
from passpilot.synthetic import (
    SMOKE_PASS_NAMES,
    Rule,
    SyntheticEffectTable,
    cost,
    random_table,
    smoke_corpus,
)
from passpilot.world_model import WorldModel, WorldModelConfig


def synthetic_env(n_actions=5, limit=45):
    names = [f"-p{i}" for i in range(n_actions)]
    return CompilerEnv(EnvConfig(backend="synthetic", action_space=ActionSpace(names),
                                 episode_limit=limit))


def tiny_agent(n_actions=5, seed=0):
    wm = WorldModel(WorldModelConfig(deter=16, groups=4, classes=4, hidden=16, layers=1),
                    56 + n_actions, n_actions, seed=seed)
    ac = ActorCritic(AgentConfig(hidden=16, layers=1), wm.feat_dim, n_actions, seed=seed)
    return wm, ac


# -- lambda returns -------------------------------------------------------------

def test_lambda_returns_small_example():
    # H=2, gamma=lambda=0.5, c=1: V_2 = v_2 = 4; V_1 = 2 + 0.5*(0.5*4 + 0.5*4) = 4
    # V_0 = 1 + 0.5*(0.5*2 + 0.5*4) = 2.5
    out = lambda_returns([1.0, 2.0], [0.0, 2.0, 4.0], [1.0, 1.0], 0.5, 0.5)
    assert out.tolist() == [2.5, 4.0]


def test_lambda_returns_hand_case():
    out = lambda_returns([1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 10.0], [1.0, 1.0, 0.0], 1.0, 1.0)
    # the terminal continue masks the bootstrap: 1 + 1 + 1
    assert out.tolist() == [3.0, 2.0, 1.0]


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(0.5, 1.0), st.data())
def test_lambda_zero_and_one_collapse(rewards, gamma, data):
    H = len(rewards)
    values = data.draw(st.lists(st.floats(-5, 5), min_size=H + 1, max_size=H + 1))
    c = np.ones(H)
    r, v = np.array(rewards), np.array(values)
    one_step = lambda_returns(r, v, c, gamma, 1e-300)
    np.testing.assert_allclose(one_step, r + gamma * v[1:], atol=1e-9)
    mc = lambda_returns(r, v, c, gamma, 1.0)
    expect = [sum(gamma ** (k - t) * r[k] for k in range(t, H)) + gamma ** (H - t) * v[H]
              for t in range(H)]
    np.testing.assert_allclose(mc, expect, atol=1e-9)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=10), st.floats(0.1, 1.0),
       st.floats(0.1, 1.0), st.data())
def test_lambda_returns_satisfy_recursion(rewards, gamma, lam, data):
    H = len(rewards)
    v = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=H + 1, max_size=H + 1)))
    c = np.array(data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=H, max_size=H)))
    out = lambda_returns(rewards, v, c, gamma, lam)
    nxt = np.append(out[1:], v[H])
    np.testing.assert_allclose(
        out, np.array(rewards) + gamma * c * ((1 - lam) * v[1:] + lam * nxt), atol=1e-12)


def test_lambda_returns_length_mismatch():
    with pytest.raises(ValueError):
        lambda_returns([1.0, 2.0], [0.0, 1.0], [1.0, 1.0], 0.9, 0.9)


# -- actor / critic losses --------------------------------------------------------

def test_actor_gradient_matches_closed_form():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 3))
    actions = np.array([0, 2, 1, 2])
    adv = rng.normal(size=4)
    eta = 0.3
    t = Tensor(logits.copy(), requires_grad=True)
    actor_loss(t, actions, adv, eta).backward()
    p = np.exp(logits - logits.max(-1, keepdims=True))
    p /= p.sum(-1, keepdims=True)
    H = -(p * np.log(p)).sum(-1, keepdims=True)
    onehot = np.eye(3)[actions]
    expect = (adv[:, None] * (p - onehot) + eta * p * (np.log(p) + H)) / 4
    assert max_rel_error(t.grad, expect) < 1e-10


def test_zero_advantage_gives_pure_entropy_gradient():
    logits = np.array([[2.0, -1.0]])
    t = Tensor(logits.copy(), requires_grad=True)
    actor_loss(t, np.array([0]), np.zeros(1), 1.0).backward()
    # gradient ascent on entropy pushes the logits together
    assert t.grad[0, 0] > 0 > t.grad[0, 1]
    t2 = Tensor(np.zeros((1, 2)), requires_grad=True)
    actor_loss(t2, np.array([1]), np.zeros(1), 1.0).backward()
    np.testing.assert_allclose(t2.grad, 0.0, atol=1e-15)


def test_actor_critic_losses_finite_differences_two_actions():
    ac = ActorCritic(AgentConfig(hidden=5, layers=1), 3, 2, seed=1, dtype=np.float64)
    rng = np.random.default_rng(3)
    for p in list(ac.actor_store.params.values()) + list(ac.critic_store.params.values()):
        p.data = rng.normal(scale=0.5, size=p.data.shape)
    feats = rng.normal(size=(6, 3))
    actions = np.array([0, 1, 1, 0, 1, 0])
    adv = rng.normal(size=6)
    targets = rng.normal(size=6)
    w = np.array([1.0, 1.0, 0.5, 1.0, 0.0, 1.0])
    errs = check_params(lambda: actor_loss(ac.logits(feats), actions, adv, 0.1, w),
                        ac.actor_store.params)
    errs.update(check_params(lambda: critic_loss(ac.value(feats), targets, w),
                             ac.critic_store.params))
    assert max(errs.values()) < 1e-4, errs


def test_critic_regression_on_toy_states():
    ac = ActorCritic(AgentConfig(hidden=32, layers=1), 10, 2, seed=0, dtype=np.float64)
    feats = np.eye(10)
    targets = np.linspace(-1, 1, 10)
    for _ in range(1500):
        ac.critic_store.zero_grad()
        critic_loss(ac.value(feats), targets).backward()
        adam_step(ac.critic_store, ac.critic_store.grads(), 1e-2, 0.0, 100.0)
    mse = np.mean((ac.value(feats).data - targets) ** 2)
    assert mse <= 1e-3


def test_actor_is_uniform_at_init():
    _, ac = tiny_agent()
    p = ac.probs(np.random.default_rng(0).normal(size=(7, ac.feat_dim)))
    np.testing.assert_allclose(p, 0.2, atol=1e-7)


def test_train_step_metrics_are_finite():
    wm, ac = tiny_agent()
    env = synthetic_env()
    prog = smoke_corpus(1)[0]
    eps = [policy_rollout(env, prog, UniformPolicy(5), "sample", seed=s) for s in range(3)]
    from passpilot.replay import ReplayBuffer

    buf = ReplayBuffer(1000, seed=0)
    for e in eps:
        buf.append(e)
    batch = buf.sample(2, 8, np.random.default_rng(0))
    _, starts = wm.train_step(batch, np.random.default_rng(1))
    m = ac.train_step(wm, starts, np.random.default_rng(2))
    assert all(np.isfinite(v) for v in m.values())
    assert m["agent_skipped"] == 0.0


# -- policies ---------------------------------------------------------------------

def test_argmax_rollout_is_deterministic():
    wm, ac = tiny_agent(seed=4)
    env = synthetic_env()
    prog = smoke_corpus(1)[0]
    a = policy_rollout(env, prog, LatentPolicy(wm, ac), "argmax", seed=1)
    b = policy_rollout(env, prog, LatentPolicy(wm, ac), "argmax", seed=99)
    assert a.actions.tolist() == b.actions.tolist()
    assert a.counts.tolist() == b.counts.tolist()


def test_uniform_policy_matches_enumeration():
    # expected final count of 2-step uniform episodes equals the enumeration mean
    table = smoke_corpus(1)[0]
    env = synthetic_env(limit=2)
    exact = np.mean([cost(table.run(s)) for s in itertools.product(range(5), repeat=2)])
    rng = np.random.default_rng(0)
    finals = [policy_rollout(env, table, UniformPolicy(5), "sample", rng=rng).counts[-1]
              for _ in range(4000)]
    sd = np.std([cost(table.run(s)) for s in itertools.product(range(5), repeat=2)])
    assert abs(np.mean(finals) - exact) < 4 * sd / np.sqrt(4000)


def test_rollout_rejects_unknown_mode():
    with pytest.raises(ValueError):
        policy_rollout(synthetic_env(), smoke_corpus(1)[0], UniformPolicy(5), "greedy")


# -- value prediction and core sets -------------------------------------------

def test_sequence_value_example():
    assert sequence_value(200, 150, 180) == 2.5
    assert sequence_value(10, 8, 10) == 2.0     # denominator floored at one


def all_sequences(n_actions, max_len):
    for L in range(1, max_len + 1):
        yield from itertools.product(range(n_actions), repeat=L)


def test_oracle_value_predict_equals_normalized_improvement():
    table = random_table(np.random.default_rng(7))
    env = synthetic_env()
    oracle = OracleSimulator(env, table)
    obs0 = env.reset(table)
    denom = max(cost(table.initial) - table.baseline_count, 1)
    seqs = list(all_sequences(5, 4))
    assert len(seqs) == 780
    for s in seqs:
        v = value_predict(oracle, obs0, s)
        c0, cm = cost(table.initial), cost(table.run(s))
        assert round(v * denom) == c0 - cm
        assert v == pytest.approx(sequence_value(c0, cm, table.baseline_count), abs=1e-12)
    assert value_predict(oracle, obs0, []) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_coreset_select_with_oracle_finds_enumeration_optimum(seed):
    table = random_table(np.random.default_rng(100 + seed))
    env = synthetic_env()
    seqs = list(all_sequences(5, 3))
    best = min(cost(table.run(s)) for s in seqs)
    res = coreset_select(env, table, CoreSet(seqs), OracleSimulator(env, table), budget=45)
    assert res.count == min(best, cost(table.initial))
    assert cost(table.run(res.sequence)) == res.count
    assert res.passes <= 45


def test_coreset_budget_and_single_sequence():
    table = smoke_corpus(1)[0]
    env = synthetic_env()
    cs = CoreSet([(2, 3, 3)])
    res = coreset_select(env, table, cs, OracleSimulator(env, table), budget=2)
    assert res.passes == 2
    assert len(res.sequence) <= 2
    res = coreset_select(env, table, cs, OracleSimulator(env, table))
    assert res.passes == 3


def test_coreset_file_parsing(tmp_path):
    space = ActionSpace(SMOKE_PASS_NAMES)
    p = tmp_path / "core.txt"
    p.write_text("# library\n0,1,2\n-enable, -fold  # names work too\n\n4\n")
    cs = CoreSet.from_file(p, space)
    assert cs.sequences == [(0, 1, 2), (2, 3), (4,)]
    assert cs.total_passes == 6
    cs.to_file(tmp_path / "out.txt", space)
    assert CoreSet.from_file(tmp_path / "out.txt", space).sequences == cs.sequences
    (tmp_path / "bad.txt").write_text("0,9\n")
    with pytest.raises(ValueError):
        CoreSet.from_file(tmp_path / "bad.txt", space)
    (tmp_path / "bad2.txt").write_text("-nope\n")
    with pytest.raises(ValueError):
        CoreSet.from_file(tmp_path / "bad2.txt", space)
    with pytest.raises(ValueError):
        CoreSet([()])


# -- searches -----------------------------------------------------------------

def test_budget_parsing():
    assert SearchBudget.parse("30s").seconds == 30.0
    assert SearchBudget.parse("45p").passes == 45
    assert SearchBudget.parse("7").episodes == 7
    with pytest.raises(ValueError):
        SearchBudget(seconds=1, passes=2)
    with pytest.raises(ValueError):
        SearchBudget()


def test_guided_search_with_zero_budget_equals_argmax_rollout():
    wm, ac = tiny_agent(seed=2)
    env = synthetic_env()
    for prog in smoke_corpus(3, seed=5):
        ep = policy_rollout(env, prog, LatentPolicy(wm, ac), "argmax")
        res = guided_search(env, prog, LatentPolicy(wm, ac), SearchBudget(passes=0))
        assert res.episodes == 1 and res.passes == 45
        assert res.count == min(ep.counts.min(), ep.counts[0])


def test_guided_search_monotone_in_budget():
    wm, ac = tiny_agent(seed=3)
    env = synthetic_env()
    prog = smoke_corpus(1, seed=2)[0]
    counts = [guided_search(env, prog, LatentPolicy(wm, ac), SearchBudget(passes=b), seed=0).count
              for b in (45, 90, 450, 1800)]
    assert counts == sorted(counts, reverse=True)


def test_random_search_reaches_optimum_on_small_table():
    table = random_table(np.random.default_rng(11))
    env = synthetic_env(limit=3)
    seq, val = brute_force_oracle(env, table, 3)
    res = random_search(env, table, SearchBudget(episodes=400), seed=0)
    assert res.count == cost(table.initial) - round(val * env.denominator)
    assert res.episodes == 400


def test_random_search_first_trial_always_runs():
    env = synthetic_env()
    res = random_search(env, smoke_corpus(1)[0], SearchBudget(seconds=0.0))
    assert res.episodes == 1 and res.passes == 45


def test_search_result_record():
    env = synthetic_env()
    table = SyntheticEffectTable(((Rule((-1,)),),) * 5, (50,), 20)
    res = random_search(env, table, SearchBudget(episodes=1))
    import json

    rec = json.loads(res.to_record([f"-p{i}" for i in range(5)]))
    assert set(rec) == {"program", "sequence", "reduction", "wall_time"}
    assert rec["sequence"] == ["-p" + str(a) for a in res.sequence]
