import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from passpilot.autophase import INDEX, TOTAL_INSTS
from passpilot.env import (
    AUTOPHASE_PASSES,
    TOOL_ENV_VAR,
    ActionSpace,
    BackendError,
    CompilerEnv,
    EnvConfig,
    EpisodeFinished,
    OptBackend,
    _OzCache,
    resolve_tool,
    rollout,
)
from passpilot.synthetic import (
    SMOKE_PASS_NAMES,
    Rule,
    SyntheticEffectTable,
    cost,
    random_table,
    smoke_corpus,
)


def synthetic_env(n_actions=5, limit=45):
    names = [f"-p{i}" for i in range(n_actions)]
    return CompilerEnv(EnvConfig(backend="synthetic", action_space=ActionSpace(names),
                                 episode_limit=limit))


# -- action space -------------------------------------------------------------

def test_autophase_action_space():
    space = ActionSpace.autophase()
    assert space.size == 42 == len(AUTOPHASE_PASSES)
    assert space.pass_names[7] == space.pass_names[8] == "-functionattrs"


def test_user_action_space_rejects_duplicates():
    with pytest.raises(ValueError):
        ActionSpace(["-a", "-b", "-a"])
    with pytest.raises(ValueError):
        ActionSpace([])


def test_action_space_hash_depends_on_order(tmp_path):
    a, b = ActionSpace(["-x", "-y"]), ActionSpace(["-y", "-x"])
    assert a.hash != b.hash
    a.to_file(tmp_path / "a.txt")
    assert ActionSpace.from_file(tmp_path / "a.txt").hash == a.hash


def test_action_space_file_comments(fixtures_dir):
    space = ActionSpace.from_file(fixtures_dir / "passes.txt")
    assert space.pass_names == ("-dce", "-noop", "-fail", "-garbage")


# -- synthetic backend --------------------------------------------------------

def test_observation_layout():
    env = synthetic_env()
    table = SyntheticEffectTable(((Rule((-1, 0)),),) * 5, (4, 6), baseline_count=7)
    obs = env.reset(table)
    assert obs.shape == (env.obs_dim,) == (56 + 5,)
    assert obs[TOTAL_INSTS] == 1.0
    assert obs[0] == pytest.approx(0.4)
    assert not obs[56:].any()
    res = env.step(2)
    assert res.observation[56 + 2] == pytest.approx(1 / 45)
    assert res.reward == pytest.approx(1 / 3)
    assert res.info["instruction_count"] == 9


def test_denominator_floor():
    env = synthetic_env()
    table = SyntheticEffectTable(((Rule((-1,)),),) * 5, (5,), baseline_count=9)
    env.reset(table)
    assert env.denominator == 1
    assert env.step(0).reward == 1.0


def test_episode_limit_and_errors():
    env = synthetic_env(limit=3)
    table = random_table(np.random.default_rng(0))
    with pytest.raises(EpisodeFinished):
        env.step(0)
    env.reset(table)
    with pytest.raises(IndexError):
        env.step(5)
    dones = [env.step(0).done for _ in range(3)]
    assert dones == [False, False, True]
    with pytest.raises(EpisodeFinished):
        env.step(0)


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 4), min_size=1, max_size=45))
def test_reward_telescoping(seed, actions):
    table = random_table(np.random.default_rng(seed))
    env = synthetic_env()
    ep = rollout(env, table, actions)
    total = int(np.rint(ep.rewards_raw * env.denominator).sum())
    assert total == ep.counts[0] - ep.counts[-1]
    assert ep.counts[-1] == cost(table.run(actions))


def test_smoke_corpus_baselines():
    progs = smoke_corpus(10, 0)
    assert len(progs) == 10
    for p in progs:
        assert p.n_actions == len(SMOKE_PASS_NAMES)
        assert 0 < p.baseline_count < cost(p.initial)


def test_rule_guards_are_conjunctive():
    rule = Rule((-1, 0), ((0, 2), (1, 3)))
    assert rule.fires((2, 3)) and not rule.fires((2, 2)) and not rule.fires((1, 5))


def test_counters_floor_at_zero():
    t = SyntheticEffectTable(((Rule((-5,)),),), (3,), 0)
    assert t.apply((3,), 0) == (0,)


# -- tool backend -------------------------------------------------------------

@pytest.fixture
def opt_env(fake_opt, fixtures_dir, monkeypatch):
    monkeypatch.delenv(TOOL_ENV_VAR, raising=False)
    space = ActionSpace.from_file(fixtures_dir / "passes.txt")
    cfg = EnvConfig(backend="opt", action_space=space, baseline_mode="oz", tool=fake_opt)
    return CompilerEnv(cfg)


def test_tool_backend_rewards(opt_env, fixtures_dir):
    text = (fixtures_dir / "dead_code.ll").read_text()
    obs = opt_env.reset(text)
    assert opt_env.initial_count == 5 and opt_env.baseline_count == 2
    assert obs[INDEX["NumAddInst"]] == pytest.approx(2 / 5)
    r1 = opt_env.step(0)
    assert r1.reward == pytest.approx(1 / 3) and r1.info["instruction_count"] == 4
    assert "%dead1" not in opt_env.ir_text
    r2 = opt_env.step(1)
    assert r2.reward == 0.0 and not r2.info["pass_failed"]


@pytest.mark.parametrize("action", [2, 3])
def test_failed_pass_keeps_state(opt_env, fixtures_dir, action):
    text = (fixtures_dir / "dead_code.ll").read_text()
    opt_env.reset(text)
    before = opt_env.ir_text
    res = opt_env.step(action)
    assert res.info["pass_failed"]
    assert res.reward == 0.0
    assert opt_env.ir_text == before
    assert res.observation[56 + action] == pytest.approx(1 / 45)


def test_oz_cache_computes_once(fake_opt, fixtures_dir):
    cache = _OzCache()
    backend = OptBackend(fake_opt, cache=cache)
    text = (fixtures_dir / "dead_code.ll").read_text()
    calls = []
    orig = backend.run
    backend.run = lambda t, f: calls.append(f) or orig(t, f)
    assert backend.baseline(text) == 2
    assert backend.baseline(text) == 2
    assert calls == [["-Oz"]] and len(cache) == 1


def test_tool_resolution(fake_opt, monkeypatch, tmp_path):
    monkeypatch.setenv(TOOL_ENV_VAR, fake_opt)
    assert resolve_tool("/does/not/exist") == fake_opt
    monkeypatch.setenv(TOOL_ENV_VAR, str(tmp_path / "missing"))
    with pytest.raises(BackendError):
        resolve_tool()


def test_provided_baseline_required(fake_opt, fixtures_dir):
    cfg = EnvConfig(backend="opt", action_space=ActionSpace(["-dce"]), tool=fake_opt,
                    baseline_mode="provided")
    env = CompilerEnv(cfg)
    text = (fixtures_dir / "dead_code.ll").read_text()
    with pytest.raises(BackendError):
        env.reset(text)
    env.reset(text, baseline_count=4)
    assert env.denominator == 1
