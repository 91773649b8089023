"""Recurrent state-space model of the pass-application process.

Components: a GRU over ``[z_{t-1}, a_{t-1}]``, a prior head on ``h_t``, a
posterior head on ``[h_t, o_t]``, and observation / smoothed-reward /
continue decoders on ``[h_t, z_t]``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from passpilot.autodiff import tensor as T
from passpilot.autodiff.nn import (
    MLP,
    Dense,
    GRUCell,
    NonFiniteGradient,
    ParamStore,
    adam_step,
    categorical_straight_through,
)
from passpilot.autodiff.tensor import Tensor, no_grad
from passpilot.autophase import N_FEATURES
from passpilot.replay import SequenceBatch

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteLoss(FloatingPointError):
    pass


FULL_SCALES = {"obs_autophase": 100.0, "obs_histogram": 10.0, "reward": 1.0, "continue": 5.0,
                "kl": 0.1}


@dataclass
class WorldModelConfig:
    deter: int = 256
    groups: int = 16
    classes: int = 16
    hidden: int = 128
    layers: int = 2
    unimix: float = 0.01
    # desk default weights the reward as value mode does; the "paper" preset keeps 1.0
    scales: dict = field(default_factory=lambda: dict(FULL_SCALES, reward=100.0))
    kl_balance: float = 0.8
    free_bits: float = 1.0
    free_bits_per_group: bool = False
    lr: float = 1e-3
    weight_decay: float = 1e-5
    clip: float = 100.0

    def __post_init__(self):
        if any(v < 0 for v in self.scales.values()):
            raise ValueError("loss scales must be non-negative")
        if not 0.0 <= self.kl_balance <= 1.0:
            raise ValueError("kl_balance must lie in [0, 1]")

    @classmethod
    def paper(cls, **kw) -> WorldModelConfig:
        kw.setdefault("lr", 1e-4)
        kw.setdefault("scales", dict(FULL_SCALES))
        return cls(deter=1024, groups=32, classes=32, hidden=400, layers=4, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentState:
    h: Tensor   # (B, deter)
    z: Tensor   # (B, G, K) one-hot per group (all zeros for the blank initial state)

    @property
    def batch(self) -> int:
        return self.h.shape[0]

    def features(self) -> Tensor:
        b = self.h.shape[0]
        return T.concat([self.h, self.z.reshape(b, -1)], axis=-1)

    def detach(self) -> LatentState:
        return LatentState(self.h.detach(), self.z.detach())

    def take(self, idx) -> LatentState:
        return LatentState(Tensor(self.h.data[idx]), Tensor(self.z.data[idx]))


def _gauss_nll(pred: Tensor, target: np.ndarray) -> Tensor:
    """Unit-variance Gaussian NLL summed over the last axis, per row."""
    d = pred.shape[-1]
    diff = pred - Tensor(target.astype(pred.dtype))
    return T.square(diff).sum(axis=-1) * 0.5 + d * _HALF_LOG_2PI


def categorical_kl(q_probs: Tensor, p_probs: Tensor) -> Tensor:
    """KL(q || p) per group, summed over classes: (..., G, K) -> (..., G)."""
    return (q_probs * (T.log(q_probs) - T.log(p_probs))).sum(axis=-1)


class WorldModel:
    def __init__(self, config: WorldModelConfig, obs_dim: int, n_actions: int, seed: int = 0,
                 dtype=np.float32):
        self.config = c = config
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.dtype = dtype
        self.store = ParamStore(dtype=dtype)
        rng = np.random.default_rng(seed)
        zdim = c.groups * c.classes
        self.feat_dim = c.deter + zdim
        self.img_in = Dense(self.store, "wm.img_in", zdim + n_actions, c.hidden, rng)
        self.gru = GRUCell(self.store, "wm.gru", c.hidden, c.deter, rng)
        self.prior_head = MLP(self.store, "wm.prior", c.deter, c.hidden, 1, zdim, rng, zero_out=True)
        self.post_head = MLP(self.store, "wm.post", c.deter + obs_dim, c.hidden, 1, zdim, rng,
                             zero_out=True)
        self.obs_head = MLP(self.store, "wm.obs", self.feat_dim, c.hidden, c.layers, obs_dim, rng)
        self.reward_head = MLP(self.store, "wm.reward", self.feat_dim, c.hidden, c.layers, 1, rng,
                               zero_out=True)
        self.cont_head = MLP(self.store, "wm.cont", self.feat_dim, c.hidden, c.layers, 1, rng)

    # -- latent dynamics ---------------------------------------------------

    def initial(self, batch: int) -> LatentState:
        c = self.config
        return LatentState(Tensor(np.zeros((batch, c.deter), self.dtype)),
                           Tensor(np.zeros((batch, c.groups, c.classes), self.dtype)))

    def _action_onehot(self, action, batch: int) -> np.ndarray:
        out = np.zeros((batch, self.n_actions), dtype=self.dtype)
        if action is None:
            return out
        a = np.broadcast_to(np.asarray(action, dtype=np.int64), (batch,))
        valid = a >= 0
        out[np.arange(batch)[valid], a[valid]] = 1.0
        return out

    def _recur(self, prev: LatentState, action) -> Tensor:
        b = prev.batch
        x = T.concat([prev.z.reshape(b, -1), Tensor(self._action_onehot(action, b))], axis=-1)
        return self.gru(prev.h, self.img_in(x))

    def _logits(self, head: MLP, x: Tensor) -> Tensor:
        c = self.config
        return head(x).reshape(x.shape[0], c.groups, c.classes)

    def _sample(self, logits: Tensor, rng, mode: bool):
        return categorical_straight_through(logits, rng, self.config.unimix, mode=mode)

    def prior(self, prev: LatentState, action, rng=None, mode: bool = False) -> LatentState:
        h = self._recur(prev, action)
        z, _ = self._sample(self._logits(self.prior_head, h), rng, mode)
        return LatentState(h, z)

    def posterior(self, prev: LatentState, action, obs, rng=None, mode: bool = False) -> LatentState:
        return self._observe(prev, action, obs, rng, mode)[0]

    def _observe(self, prev, action, obs, rng, mode=False, relaxed=False):
        h = self._recur(prev, action)
        obs_t = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=self.dtype).reshape(prev.batch, -1))
        if obs_t.shape[-1] != self.obs_dim:
            raise T.ShapeMismatch(f"observation has {obs_t.shape[-1]} dims, expected {self.obs_dim}")
        post_logits = self._logits(self.post_head, T.concat([h, obs_t], axis=-1))
        prior_logits = self._logits(self.prior_head, h)
        z, post_probs = self._sample(post_logits, rng, mode)
        if relaxed:
            z = post_probs
        return LatentState(h, z), post_probs, prior_logits

    def decode(self, state: LatentState):
        """Observation mean, smoothed-reward mean, continue probability."""
        f = state.features()
        obs = self.obs_head(f)
        reward = self.reward_head(f).reshape(-1)
        cont = T.sigmoid(self.cont_head(f).reshape(-1))
        return obs, reward, cont

    # -- training ----------------------------------------------------------

    def _mixed_probs(self, logits: Tensor) -> Tensor:
        k = logits.shape[-1]
        u = self.config.unimix
        return T.softmax(logits, axis=-1) * (1.0 - u) + u / k

    def observe_sequence(self, batch: SequenceBatch, rng, relaxed: bool = False):
        """Filter a batch through the posterior; returns per-step states and probs."""
        B, L = batch.shape
        prev = self.initial(B)
        states, posts, priors = [], [], []
        for i in range(L + 1):
            action = None if i == 0 else batch.actions[:, i - 1]
            state, post_probs, prior_logits = self._observe(prev, action, batch.obs[:, i], rng,
                                                            relaxed=relaxed)
            states.append(state)
            posts.append(post_probs)
            priors.append(self._mixed_probs(prior_logits))
            prev = state
        return states, posts, priors

    def loss(self, batch: SequenceBatch, rng, relaxed: bool = False):
        """Total loss tensor, per-term metrics, and the posterior states."""
        c = self.config
        sc = c.scales
        B, L = batch.shape
        states, posts, priors = self.observe_sequence(batch, rng, relaxed)
        feats = T.concat([s.features() for s in states], axis=0)           # ((L+1)*B, F), time-major
        obs_tgt = batch.obs.transpose(1, 0, 2).reshape(-1, self.obs_dim)
        obs_pred = self.obs_head(feats)
        nll_auto = _gauss_nll(obs_pred[:, :N_FEATURES], obs_tgt[:, :N_FEATURES]).mean()
        nll_hist = _gauss_nll(obs_pred[:, N_FEATURES:], obs_tgt[:, N_FEATURES:]).mean()

        step_feats = feats[B:]
        rew_tgt = batch.rewards.T.reshape(-1, 1)
        nll_rew = _gauss_nll(self.reward_head(step_feats), rew_tgt).mean()
        cont_logit = self.cont_head(step_feats).reshape(-1)
        cont_tgt = Tensor(batch.continues.T.reshape(-1).astype(self.dtype))
        nll_cont = (T.softplus(cont_logit) - cont_logit * cont_tgt).mean()

        post = T.stack(posts, axis=0)    # (L+1, B, G, K)
        prior = T.stack(priors, axis=0)
        kl_dyn = categorical_kl(T.stop_gradient(post), prior)
        kl_rep = categorical_kl(post, T.stop_gradient(prior))
        fb = c.free_bits
        if c.free_bits_per_group:
            kl_dyn_f = T.maximum(kl_dyn, fb).sum(axis=-1)
            kl_rep_f = T.maximum(kl_rep, fb).sum(axis=-1)
        else:
            kl_dyn_f = T.maximum(kl_dyn.sum(axis=-1), fb)
            kl_rep_f = T.maximum(kl_rep.sum(axis=-1), fb)
        kl = (kl_dyn_f * c.kl_balance + kl_rep_f * (1.0 - c.kl_balance)).mean()

        total = (nll_auto * sc["obs_autophase"] + nll_hist * sc["obs_histogram"]
                 + nll_rew * sc["reward"] + nll_cont * sc["continue"] + kl * sc["kl"])
        metrics = {
            "loss": total.item(),
            "nll_autophase": nll_auto.item(),
            "nll_histogram": nll_hist.item(),
            "nll_reward": nll_rew.item(),
            "nll_continue": nll_cont.item(),
            "kl": kl.item(),
            "kl_raw": float(kl_rep.data.sum(axis=-1).mean()),
        }
        if not np.isfinite(metrics["loss"]):
            raise NonFiniteLoss(f"world-model loss is {metrics['loss']}")
        return total, metrics, states

    def train_step(self, batch: SequenceBatch, rng):
        """One Adam step; returns (metrics, detached posterior states)."""
        c = self.config
        self.store.zero_grad()
        try:
            total, metrics, states = self.loss(batch, rng)
        except NonFiniteLoss:
            return {"skipped": 1.0}, None
        total.backward()
        try:
            metrics["grad_norm"] = adam_step(self.store, self.store.grads(), c.lr,
                                             c.weight_decay, c.clip)
            metrics["skipped"] = 0.0
        except NonFiniteGradient:
            metrics["grad_norm"] = float("nan")
            metrics["skipped"] = 1.0
        starts = LatentState(Tensor(np.concatenate([s.h.data for s in states])),
                             Tensor(np.concatenate([s.z.data for s in states])))
        return metrics, starts

    # -- inference ---------------------------------------------------------

    def imagine(self, start: LatentState, policy, horizon: int, rng):
        """Roll the prior forward under ``policy(features, rng) -> actions``.

        Returns numpy arrays: ``feats`` (H+1, B, F), ``actions`` (H, B),
        ``rewards`` (H, B), ``continues`` (H, B).
        """
        B = start.batch
        with no_grad():
            state = start.detach()
            feats = [state.features().data]
            actions, rewards, conts = [], [], []
            for _ in range(horizon):
                a = np.asarray(policy(feats[-1], rng), dtype=np.int64)
                state = self.prior(state, a, rng)
                f = state.features()
                feats.append(f.data)
                actions.append(a)
                rewards.append(self.reward_head(f).data.reshape(-1))
                conts.append(T.sigmoid(self.cont_head(f)).data.reshape(-1))
        empty = np.zeros((0, B))
        return {
            "feats": np.stack(feats),
            "actions": np.stack(actions) if actions else empty.astype(np.int64),
            "rewards": np.stack(rewards) if rewards else empty,
            "continues": np.stack(conts) if conts else empty,
        }

    def encode(self, obs, rng=None, mode: bool = True) -> LatentState:
        """Posterior of a first observation from the blank state and no action."""
        obs = np.asarray(obs, dtype=self.dtype).reshape(-1, self.obs_dim)
        with no_grad():
            return self.posterior(self.initial(obs.shape[0]), None, obs, rng, mode)

    def predict_rewards(self, obs0, actions, rng=None) -> np.ndarray:
        """Smoothed-reward predictions along ``actions`` starting from ``obs0``."""
        with no_grad():
            state = self.encode(obs0, rng)
            out = []
            for a in actions:
                state = self.prior(state, [int(a)], rng, mode=True)
                out.append(float(self.reward_head(state.features()).data.reshape(-1)[0]))
        return np.asarray(out)

    def predict_next_obs(self, prev: LatentState, action, mode: bool = True, rng=None) -> np.ndarray:
        """One-step observation prediction through the prior."""
        with no_grad():
            s = self.prior(prev, action, rng, mode=mode)
            return self.obs_head(s.features()).data


def one_step_errors(model: WorldModel, episodes, rng=None) -> dict:
    """Prior one-step prediction errors against predict-the-mean baselines.

    Episodes must share a length. For each step the posterior filters the real
    history up to ``o_t``; the prior then predicts ``o_{t+1}`` and the
    smoothed reward of ``a_t`` without seeing ``o_{t+1}``.
    """
    obs = np.stack([ep.observations for ep in episodes]).astype(model.dtype)    # (N, T+1, D)
    acts = np.stack([ep.actions for ep in episodes])
    rews = np.stack([ep.rewards_smoothed for ep in episodes])
    N, T1, _ = obs.shape
    pred_obs, pred_rew = [], []
    with no_grad():
        state = model.posterior(model.initial(N), None, obs[:, 0], rng, mode=True)
        for t in range(T1 - 1):
            nxt = model.prior(state, acts[:, t], rng, mode=True)
            f = nxt.features()
            pred_obs.append(model.obs_head(f).data)
            pred_rew.append(model.reward_head(f).data.reshape(-1))
            state = model.posterior(state, acts[:, t], obs[:, t + 1], rng, mode=True)
    pred_obs = np.stack(pred_obs, axis=1)
    pred_rew = np.stack(pred_rew, axis=1)
    tgt_obs = obs[:, 1:]
    obs_mse = float(np.mean((pred_obs - tgt_obs) ** 2))
    obs_base = float(np.mean((tgt_obs - tgt_obs.reshape(-1, tgt_obs.shape[-1]).mean(axis=0)) ** 2))
    rew_mse = float(np.mean((pred_rew - rews) ** 2))
    rew_base = float(np.mean((rews - rews.mean()) ** 2))
    feat_err = np.abs(pred_obs - tgt_obs)[..., :N_FEATURES].reshape(-1, N_FEATURES)
    feat_std = tgt_obs[..., :N_FEATURES].reshape(-1, N_FEATURES).std(axis=0)
    varying = feat_std > 0
    return {
        "obs_mse": obs_mse, "obs_baseline_mse": obs_base,
        "reward_mse": rew_mse, "reward_baseline_mse": rew_base,
        "feature_rel_error": float(feat_err[:, varying].mean(axis=0).mean() / feat_std[varying].mean())
        if varying.any() else 0.0,
    }
