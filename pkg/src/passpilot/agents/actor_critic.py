"""Actor and critic over latent features, trained on imagined rollouts."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from passpilot.autodiff import tensor as T
from passpilot.autodiff.nn import MLP, NonFiniteGradient, ParamStore, adam_step
from passpilot.autodiff.tensor import Tensor, no_grad


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lam: float = 0.95
    entropy_eta: float = 3e-4
    lr: float = 3e-5
    horizon: int = 15
    exploration_steps: int = 500
    train_every: int = 5
    hidden: int = 128
    layers: int = 2
    weight_decay: float = 1e-5
    clip: float = 100.0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def lambda_returns(rewards, values, continues, gamma: float, lam: float) -> np.ndarray:
    """Backward TD(lambda) targets.

    ``rewards`` and ``continues`` hold steps 1..H, ``values`` holds 0..H;
    returns ``V_0..V_{H-1}`` with ``V_H = v_H``. Leading axis is time.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    c = np.asarray(continues, dtype=np.float64)
    H = r.shape[0]
    if v.shape[0] != H + 1 or c.shape[0] != H:
        raise ValueError(f"lambda_returns: {H} rewards need {H + 1} values and {H} continues")
    out = np.empty_like(r)
    nxt = v[H]
    for t in range(H - 1, -1, -1):
        nxt = r[t] + gamma * c[t] * ((1.0 - lam) * v[t + 1] + lam * nxt)
        out[t] = nxt
    return out


def actor_loss(logits: Tensor, actions: np.ndarray, advantages: np.ndarray, eta: float,
               weights: np.ndarray | None = None) -> Tensor:
    """REINFORCE with a fixed advantage plus an entropy bonus, averaged over rows."""
    logp = T.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(actions)), actions] = 1.0
    chosen = (logp * Tensor(onehot)).sum(axis=-1)
    entropy = -(T.exp(logp) * logp).sum(axis=-1)
    per_row = -(chosen * Tensor(advantages.astype(logits.dtype))) - entropy * eta
    if weights is not None:
        per_row = per_row * Tensor(weights.astype(logits.dtype))
    return per_row.mean()


def critic_loss(values: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    diff = values - Tensor(targets.astype(values.dtype))
    per_row = T.square(diff) * 0.5
    if weights is not None:
        per_row = per_row * Tensor(weights.astype(values.dtype))
    return per_row.mean()


class ActorCritic:
    def __init__(self, config: AgentConfig, feat_dim: int, n_actions: int, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.feat_dim, self.n_actions = feat_dim, n_actions
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.actor_store = ParamStore(dtype=dtype)
        self.critic_store = ParamStore(dtype=dtype)
        self.actor_net = MLP(self.actor_store, "actor", feat_dim, config.hidden, config.layers,
                             n_actions, rng, zero_out=True)
        self.critic_net = MLP(self.critic_store, "critic", feat_dim, config.hidden, config.layers,
                              1, rng, zero_out=True)

    def _feats(self, feats) -> Tensor:
        if isinstance(feats, Tensor):
            return feats
        return Tensor(np.asarray(feats, dtype=self.dtype).reshape(-1, self.feat_dim))

    def logits(self, feats) -> Tensor:
        return self.actor_net(self._feats(feats))

    def probs(self, feats) -> np.ndarray:
        with no_grad():
            return T.softmax(self.logits(feats), axis=-1).data

    def value(self, feats) -> Tensor:
        return self.critic_net(self._feats(feats)).reshape(-1)

    def sample(self, feats, rng: np.random.Generator) -> np.ndarray:
        p = self.probs(feats).astype(np.float64)
        cdf = np.cumsum(p, axis=-1)
        u = rng.random((p.shape[0], 1)) * cdf[:, -1:]
        return np.minimum((cdf < u).sum(axis=-1), self.n_actions - 1)

    def train_step(self, world_model, starts, rng: np.random.Generator) -> dict:
        """Imagine from ``starts`` and take one actor and one critic step."""
        c = self.config
        traj = world_model.imagine(starts, self.sample, c.horizon, rng)
        H, B = traj["rewards"].shape
        feats = traj["feats"]                                   # (H+1, B, F)
        with no_grad():
            values = self.value(feats.reshape(-1, self.feat_dim)).data.reshape(H + 1, B)
        targets = lambda_returns(traj["rewards"], values, traj["continues"], c.gamma, c.lam)
        weights = np.cumprod(np.concatenate([np.ones((1, B)), traj["continues"][:-1]]), axis=0)
        flat = feats[:-1].reshape(-1, self.feat_dim)
        tgt = targets.reshape(-1)
        w = weights.reshape(-1)
        adv = tgt - values[:-1].reshape(-1)

        self.critic_store.zero_grad()
        closs = critic_loss(self.value(flat), tgt, w)
        closs.backward()
        self.actor_store.zero_grad()
        aloss = actor_loss(self.logits(flat), traj["actions"].reshape(-1), adv, c.entropy_eta, w)
        aloss.backward()
        metrics = {
            "critic_loss": closs.item(),
            "actor_loss": aloss.item(),
            "imag_reward": float(traj["rewards"].mean()),
            "imag_return": float(targets[0].mean()),
            "policy_entropy": float(-(self.probs(flat) * np.log(self.probs(flat) + 1e-12)).sum(-1).mean()),
        }
        skipped = 0.0
        for store in (self.critic_store, self.actor_store):
            try:
                adam_step(store, store.grads(), c.lr, c.weight_decay, c.clip)
            except NonFiniteGradient:
                skipped = 1.0
        metrics["agent_skipped"] = skipped
        return metrics
