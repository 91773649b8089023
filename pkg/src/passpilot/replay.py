"""Episode storage, reward smoothing, and fixed-length sequence sampling."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

DEFAULT_ALPHA = 0.6


class InvalidAlpha(ValueError):
    pass


class InsufficientData(RuntimeError):
    pass


def smooth_rewards(rewards, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Exponential smoothing ``r'_t = alpha * r'_{t-1} + (1 - alpha) * r_t``, ``r'_{-1} = 0``."""
    if not 0.0 <= alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in [0, 1), got {alpha}")
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for t, x in enumerate(r):
        acc = alpha * acc + (1.0 - alpha) * x
        out[t] = acc
    return out


@dataclass
class EpisodeRecord:
    observations: np.ndarray      # (T+1, obs_dim)
    actions: np.ndarray           # (T,) int
    rewards_raw: np.ndarray       # (T,)
    rewards_smoothed: np.ndarray  # (T,)
    continues: np.ndarray         # (T,) bool, False only at the last step
    counts: np.ndarray            # (T+1,) int
    program_id: str = ""
    alpha: float = DEFAULT_ALPHA

    @property
    def length(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return self.length

    @classmethod
    def build(cls, observations, actions, rewards_raw, counts, program_id="",
              alpha: float = DEFAULT_ALPHA) -> EpisodeRecord:
        raw = np.asarray(rewards_raw, dtype=np.float64)
        T = len(raw)
        cont = np.ones(T, dtype=bool)
        if T:
            cont[-1] = False
        return cls(
            observations=np.asarray(observations, dtype=np.float64).reshape(T + 1, -1),
            actions=np.asarray(actions, dtype=np.int64).reshape(T),
            rewards_raw=raw,
            rewards_smoothed=smooth_rewards(raw, alpha),
            continues=cont,
            counts=np.asarray(counts, dtype=np.int64).reshape(T + 1),
            program_id=program_id,
            alpha=alpha,
        )

    def validate(self) -> None:
        T = self.length
        if not (len(self.rewards_raw) == len(self.rewards_smoothed) == len(self.continues) == T):
            raise ValueError("episode arrays have inconsistent lengths")
        if len(self.observations) != T + 1 or len(self.counts) != T + 1:
            raise ValueError("episode needs T+1 observations and counts")
        if T and (self.continues[-1] or not self.continues[:-1].all()):
            raise ValueError("continue flags must be True except at the final step")
        if not np.array_equal(self.rewards_smoothed, smooth_rewards(self.rewards_raw, self.alpha)):
            raise ValueError("rewards_smoothed does not match the smoothing recurrence")

    def to_json(self) -> str:
        return json.dumps({
            "program_id": self.program_id,
            "actions": self.actions.tolist(),
            "rewards": self.rewards_raw.tolist(),
            "counts": self.counts.tolist(),
        })


def write_episode_log(path: str | Path, episodes: Iterable[EpisodeRecord]) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(ep.to_json() + "\n")


def read_episode_log(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class SequenceBatch:
    """``B`` windows of ``L`` transitions each.

    ``obs`` has ``L+1`` entries per window; ``actions[:, i]`` leads from
    ``obs[:, i]`` to ``obs[:, i+1]`` and earns ``rewards[:, i]``.
    """

    obs: np.ndarray        # (B, L+1, D)
    actions: np.ndarray    # (B, L)
    rewards: np.ndarray    # (B, L) smoothed
    rewards_raw: np.ndarray
    continues: np.ndarray  # (B, L) float

    @property
    def shape(self) -> tuple[int, int]:
        return self.actions.shape


class ReplayBuffer:
    def __init__(self, capacity: int = 200_000, seed: int = 0):
        self.capacity = capacity
        self.episodes: deque[EpisodeRecord] = deque()
        self.steps = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.episodes)

    def append(self, ep: EpisodeRecord) -> None:
        ep.validate()
        self.episodes.append(ep)
        self.steps += ep.length
        while self.steps > self.capacity and len(self.episodes) > 1:
            old = self.episodes.popleft()
            self.steps -= old.length
        if self.steps > self.capacity:
            # a single episode longer than the whole buffer
            self.episodes.popleft()
            self.steps = 0

    def sample(self, batch: int, length: int, rng: np.random.Generator | None = None) -> SequenceBatch:
        rng = self.rng if rng is None else rng
        eligible = [ep for ep in self.episodes if ep.length >= length]
        if not eligible:
            raise InsufficientData(f"no stored episode has {length} steps")
        # uniform over (episode, offset) pairs
        n_offsets = np.array([ep.length - length + 1 for ep in eligible])
        cum = np.cumsum(n_offsets)
        picks = rng.integers(0, cum[-1], size=batch)
        obs, acts, rews, raws, conts = [], [], [], [], []
        for p in picks:
            e = int(np.searchsorted(cum, p, side="right"))
            off = int(p - (cum[e - 1] if e else 0))
            ep = eligible[e]
            obs.append(ep.observations[off:off + length + 1])
            acts.append(ep.actions[off:off + length])
            rews.append(ep.rewards_smoothed[off:off + length])
            raws.append(ep.rewards_raw[off:off + length])
            conts.append(ep.continues[off:off + length])
        return SequenceBatch(
            obs=np.stack(obs),
            actions=np.stack(acts),
            rewards=np.stack(rews),
            rewards_raw=np.stack(raws),
            continues=np.stack(conts).astype(np.float64),
        )

    def state_dict(self) -> dict:
        return {"rng": self.rng.bit_generator.state}
