import numpy as np
import pytest

from passpilot.autodiff import tensor as T
from passpilot.autodiff.gradcheck import check_params, max_rel_error, numeric_grad
from passpilot.autodiff.tensor import Tensor
from passpilot.env import ActionSpace, CompilerEnv, EnvConfig, rollout
from passpilot.replay import ReplayBuffer
from passpilot.synthetic import SMOKE_PASS_NAMES, smoke_corpus
from passpilot.world_model import (
    LatentState,
    WorldModel,
    WorldModelConfig,
    categorical_kl,
    one_step_errors,
)

TINY = dict(deter=6, groups=2, classes=3, hidden=5, layers=1)


def smoke_env():
    return CompilerEnv(EnvConfig(backend="synthetic", action_space=ActionSpace(SMOKE_PASS_NAMES)))


def smoke_buffer(n_episodes=6, seed=0):
    env = smoke_env()
    rng = np.random.default_rng(seed)
    corpus = smoke_corpus(4, seed)
    buf = ReplayBuffer(10_000, seed=seed)
    for i in range(n_episodes):
        buf.append(rollout(env, corpus[i % 4], rng.integers(0, 5, size=45)))
    return env, buf


def test_presets():
    desk, paper = WorldModelConfig(), WorldModelConfig.paper()
    assert (desk.deter, desk.groups, desk.classes, desk.hidden, desk.layers) == (256, 16, 16, 128, 2)
    assert (paper.deter, paper.groups, paper.classes, paper.hidden, paper.layers) == (1024, 32, 32, 400, 4)
    assert paper.lr == 1e-4
    assert paper.scales == {"obs_autophase": 100.0, "obs_histogram": 10.0, "reward": 1.0,
                            "continue": 5.0, "kl": 0.1}
    assert desk.scales == dict(paper.scales, reward=100.0)
    assert WorldModelConfig().scales is not desk.scales
    with pytest.raises(ValueError):
        WorldModelConfig(kl_balance=1.5)


def test_loss_gradient_matches_finite_differences():
    # the KL term is checked separately: its stop-gradients make the raw
    # finite difference a different quantity by design
    env, buf = smoke_buffer()
    cfg = WorldModelConfig(free_bits=0.0, **TINY)
    cfg.scales = dict(cfg.scales, kl=0.0)
    wm = WorldModel(cfg, env.obs_dim, env.n_actions, seed=3, dtype=np.float64)
    rng = np.random.default_rng(5)
    # give zero-initialized heads a non-degenerate starting point
    for p in wm.store.params.values():
        p.data = p.data + rng.normal(scale=0.3, size=p.data.shape)
    batch = buf.sample(2, 3, np.random.default_rng(7))
    # the loss is ~1e4 (Gaussian normalizers), so a 1e-6 step drowns in roundoff
    errs = check_params(lambda: wm.loss(batch, np.random.default_rng(0), relaxed=True)[0],
                        wm.store.params, eps=1e-4, max_per_param=12, rng=np.random.default_rng(0))
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-4, (worst, errs[worst])


@pytest.mark.parametrize("balance", [0.8, 0.3])
def test_kl_balance_gradients(balance):
    rng = np.random.default_rng(1)
    q0, p0 = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))

    def kl_value(q, p):
        return categorical_kl(T.softmax(Tensor(q)), T.softmax(Tensor(p))).data.sum()

    qt, pt = Tensor(q0.copy(), requires_grad=True), Tensor(p0.copy(), requires_grad=True)
    qs, ps = T.softmax(qt), T.softmax(pt)
    dyn = categorical_kl(T.stop_gradient(qs), ps)
    rep = categorical_kl(qs, T.stop_gradient(ps))
    (dyn * balance + rep * (1 - balance)).sum().backward()
    num_q = numeric_grad(lambda: kl_value(q0, p0), q0)
    num_p = numeric_grad(lambda: kl_value(q0, p0), p0)
    assert max_rel_error(qt.grad, (1 - balance) * num_q) < 1e-4
    assert max_rel_error(pt.grad, balance * num_p) < 1e-4


def test_shapes_and_imagination():
    env, buf = smoke_buffer()
    wm = WorldModel(WorldModelConfig(**TINY), env.obs_dim, env.n_actions, seed=0)
    rng = np.random.default_rng(0)
    metrics, starts = wm.train_step(buf.sample(3, 4, rng), rng)
    assert metrics["skipped"] == 0.0 and np.isfinite(metrics["loss"])
    assert starts.batch == 3 * 5
    policy = lambda f, g: g.integers(0, env.n_actions, size=f.shape[0])  # noqa: E731
    traj = wm.imagine(starts, policy, 4, rng)
    assert traj["feats"].shape == (5, 15, wm.feat_dim)
    assert traj["actions"].shape == traj["rewards"].shape == traj["continues"].shape == (4, 15)
    assert np.all((traj["continues"] >= 0) & (traj["continues"] <= 1))


def test_latent_codes_are_one_hot():
    env, _ = smoke_buffer(1)
    wm = WorldModel(WorldModelConfig(**TINY), env.obs_dim, env.n_actions, seed=0)
    obs = env.reset(smoke_corpus(1)[0])
    s = wm.encode(obs, np.random.default_rng(0), mode=False)
    z = s.z.data
    assert set(np.unique(z)) <= {0.0, 1.0}
    np.testing.assert_array_equal(z.sum(-1), np.ones((1, 2)))


def test_no_previous_action_is_zero_vector():
    wm = WorldModel(WorldModelConfig(**TINY), 61, 5)
    assert not wm._action_onehot(None, 2).any()
    np.testing.assert_array_equal(wm._action_onehot([1, -1], 2), [[0, 1, 0, 0, 0], [0] * 5])


def test_value_of_empty_sequence_and_determinism():
    env, _ = smoke_buffer(1)
    wm = WorldModel(WorldModelConfig(**TINY), env.obs_dim, env.n_actions, seed=0)
    obs = env.reset(smoke_corpus(1)[0])
    assert wm.predict_rewards(obs, []).shape == (0,)
    a = wm.predict_rewards(obs, [0, 1, 2])
    np.testing.assert_array_equal(a, wm.predict_rewards(obs, [0, 1, 2]))


def test_training_reduces_prediction_error():
    env, buf = smoke_buffer(30)
    _, held = smoke_buffer(8, seed=1)
    wm = WorldModel(WorldModelConfig(deter=32, groups=4, classes=4, hidden=32, layers=1),
                    env.obs_dim, env.n_actions, seed=0)
    before = one_step_errors(wm, list(held.episodes))
    rng = np.random.default_rng(0)
    for _ in range(150):
        wm.train_step(buf.sample(8, 8, rng), rng)
    after = one_step_errors(wm, list(held.episodes))
    assert after["obs_mse"] < 0.5 * before["obs_mse"]
    assert after["obs_mse"] < after["obs_baseline_mse"]


def test_non_finite_batch_is_skipped():
    env, buf = smoke_buffer(2)
    wm = WorldModel(WorldModelConfig(**TINY), env.obs_dim, env.n_actions)
    batch = buf.sample(2, 3, np.random.default_rng(0))
    batch.obs[0, 0, 0] = np.nan
    before = {k: v.copy() for k, v in wm.store.snapshot().items()}
    metrics, starts = wm.train_step(batch, np.random.default_rng(0))
    assert metrics["skipped"] == 1.0 and starts is None
    for k, v in wm.store.snapshot().items():
        np.testing.assert_array_equal(v, before[k])


def test_latent_state_take_and_detach():
    s = LatentState(Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True),
                    Tensor(np.zeros((3, 1, 2))))
    t = s.take([2, 0])
    np.testing.assert_array_equal(t.h.data, [[4, 5], [0, 1]])
    assert not s.detach().h.requires_grad
