"""Joint collection / world-model / actor-critic training with resumable checkpoints."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from passpilot.agents.actor_critic import ActorCritic, AgentConfig
from passpilot.agents.policies import LatentPolicy, SequencePolicy, UniformPolicy, policy_rollout
from passpilot.autodiff import checkpoint as ckpt
from passpilot.env import CompilerEnv
from passpilot.replay import EpisodeRecord, ReplayBuffer
from passpilot.world_model import WorldModel, WorldModelConfig

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step", "env_steps", "episodes",
    "loss", "nll_autophase", "nll_histogram", "nll_reward", "nll_continue", "kl", "grad_norm",
    "skipped", "critic_loss", "actor_loss", "imag_reward", "imag_return", "policy_entropy",
    "agent_skipped",
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    train_steps: int = 2000            # world-model / agent update pairs
    batch: int = 16
    seq_len: int = 16
    imag_starts: int = 64              # posterior states used to seed imagination
    replay_capacity: int = 200_000
    alpha: float = 0.6
    checkpoint_every: int = 0          # in update steps; 0 = only at the end
    max_consecutive_skips: int = 10
    seed: int = 0
    value_mode: bool = False           # core-set trajectories, reward-head only

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from(state: dict) -> np.random.Generator:
    g = np.random.default_rng()
    g.bit_generator.state = state
    return g


@dataclass
class Trainer:
    env: CompilerEnv
    programs: list
    wm_config: WorldModelConfig = field(default_factory=WorldModelConfig)
    agent_config: AgentConfig = field(default_factory=AgentConfig)
    config: TrainConfig = field(default_factory=TrainConfig)
    baselines: list | None = None
    coreset: object | None = None

    def __post_init__(self):
        if not self.programs:
            raise ValueError("training corpus is empty")
        c = self.config
        if c.value_mode:
            if self.coreset is None:
                raise ValueError("value_mode needs a core set")
            self.wm_config.scales = dict(self.wm_config.scales, reward=100.0)
        n_act = self.env.n_actions
        self.wm = WorldModel(self.wm_config, self.env.obs_dim, n_act, seed=c.seed)
        self.ac = ActorCritic(self.agent_config, self.wm.feat_dim, n_act, seed=c.seed + 1)
        self.replay = ReplayBuffer(c.replay_capacity, seed=c.seed)
        self.collect_rng = np.random.default_rng([c.seed, 1])
        self.train_rng = np.random.default_rng([c.seed, 2])
        self.step = 0
        self.env_steps = 0
        self.episodes = 0
        self.pending = 0.0
        self.skips = 0
        self.rows: list[dict] = []

    # -- data ---------------------------------------------------------------

    def _policy(self):
        if self.config.value_mode:
            seq = self.coreset.sequences[int(self.collect_rng.integers(len(self.coreset)))]
            limit = self.env.config.episode_limit
            tail = self.collect_rng.integers(self.env.n_actions, size=max(limit - len(seq), 0))
            return SequencePolicy(list(seq[:limit]) + tail.tolist()), "argmax"
        if self.env_steps < self.agent_config.exploration_steps:
            return UniformPolicy(self.env.n_actions), "sample"
        return LatentPolicy(self.wm, self.ac), "sample"

    def collect_episode(self) -> EpisodeRecord:
        i = int(self.collect_rng.integers(len(self.programs)))
        base = None if self.baselines is None else self.baselines[i]
        policy, mode = self._policy()
        ep = policy_rollout(self.env, self.programs[i], policy, mode, baseline_count=base,
                            alpha=self.config.alpha, rng=self.collect_rng)
        self.replay.append(ep)
        self.env_steps += ep.length
        self.episodes += 1
        self.pending += ep.length / self.agent_config.train_every
        return ep

    # -- updates ------------------------------------------------------------

    def update(self) -> dict:
        c = self.config
        batch = self.replay.sample(c.batch, c.seq_len, self.train_rng)
        wm_metrics, starts = self.wm.train_step(batch, self.train_rng)
        row = {"step": self.step + 1, "env_steps": self.env_steps, "episodes": self.episodes}
        row.update(wm_metrics)
        skipped = bool(wm_metrics.get("skipped"))
        if starts is not None and not c.value_mode:
            n = starts.batch
            idx = np.sort(self.train_rng.choice(n, size=min(c.imag_starts, n), replace=False))
            ag = self.ac.train_step(self.wm, starts.take(idx), self.train_rng)
            row.update(ag)
            skipped = skipped or bool(ag["agent_skipped"])
        self.skips = self.skips + 1 if skipped else 0
        if self.skips > c.max_consecutive_skips:
            raise TrainingDiverged(f"{self.skips} consecutive non-finite update steps")
        self.step += 1
        row = {k: row.get(k, float("nan")) for k in METRIC_COLUMNS}
        self.rows.append(row)
        return row

    def run(self, until_step: int | None = None, metrics_path: str | Path | None = None,
            checkpoint_dir: str | Path | None = None, on_update=None) -> list[dict]:
        """Alternate episodes and updates until ``until_step`` updates are done.

        Each collected episode of length T earns T / train_every updates.
        Checkpoints are written at episode boundaries.
        """
        target = self.config.train_steps if until_step is None else until_step
        every = self.config.checkpoint_every
        fh = writer = None
        if metrics_path is not None:
            new = not Path(metrics_path).exists() or self.step == 0
            fh = open(metrics_path, "w" if new else "a", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(METRIC_COLUMNS)
        try:
            next_ckpt = (self.step // every + 1) * every if every else None
            while True:
                # updates owed by earlier episodes go first, so a resumed run
                # replays the same interleaving as an uninterrupted one
                while self.pending >= 1.0 and self.step < target:
                    if not any(ep.length >= self.config.seq_len for ep in self.replay.episodes):
                        break
                    self.pending -= 1.0
                    row = self.update()
                    if writer is not None:
                        writer.writerow([_fmt(row[k]) for k in METRIC_COLUMNS])
                    if on_update is not None:
                        on_update(self, row)
                if checkpoint_dir is not None and next_ckpt is not None and self.step >= next_ckpt:
                    self.save(Path(checkpoint_dir) / f"step{self.step:07d}")
                    next_ckpt = (self.step // every + 1) * every
                if self.step >= target:
                    break
                self.collect_episode()
        finally:
            if fh is not None:
                fh.close()
        if checkpoint_dir is not None:
            self.save(Path(checkpoint_dir) / "final")
        return self.rows

    # -- persistence --------------------------------------------------------

    def _stores(self):
        return {"wm": self.wm.store, "actor": self.ac.actor_store, "critic": self.ac.critic_store}

    def save(self, path: str | Path) -> Path:
        """``path/model.ckpt`` (parameters + optimizer moments) and ``path/state.npz`` (replay)."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        blocks = {}
        for key, store in self._stores().items():
            for n, p in store.params.items():
                blocks[f"{key}/param/{n}"] = p.data
                blocks[f"{key}/m/{n}"] = store.m[n]
                blocks[f"{key}/v/{n}"] = store.v[n]
        header = {
            "action_space_hash": self.env.config.action_space.hash,
            "pass_names": list(self.env.config.action_space.pass_names),
            "obs_dim": self.env.obs_dim,
            "world_model": self.wm_config.to_dict(),
            "agent": self.agent_config.to_dict(),
            "train": self.config.to_dict(),
            "counters": {"step": self.step, "env_steps": self.env_steps,
                         "episodes": self.episodes, "pending": self.pending, "skips": self.skips},
            "adam_steps": {k: s.step for k, s in self._stores().items()},
            "rng": {"collect": _rng_state(self.collect_rng), "train": _rng_state(self.train_rng),
                    "replay": _rng_state(self.replay.rng)},
        }
        ckpt.save(path / "model.ckpt", blocks, header)
        eps = list(self.replay.episodes)
        arrays = {}
        for i, ep in enumerate(eps):
            arrays[f"{i}_obs"] = ep.observations
            arrays[f"{i}_act"] = ep.actions
            arrays[f"{i}_rew"] = ep.rewards_raw
            arrays[f"{i}_cnt"] = ep.counts
        meta = json.dumps([{"program_id": ep.program_id, "alpha": ep.alpha} for ep in eps])
        np.savez(path / "state.npz", meta=np.array(meta), **arrays)
        return path

    def load(self, path: str | Path, with_replay: bool = True) -> None:
        path = Path(path)
        blocks, header = load_checkpoint(path / "model.ckpt", self.env.config.action_space.hash)
        for key, store in self._stores().items():
            for n, p in store.params.items():
                p.data = blocks[f"{key}/param/{n}"].astype(store.dtype)
                store.m[n] = blocks[f"{key}/m/{n}"].astype(store.dtype)
                store.v[n] = blocks[f"{key}/v/{n}"].astype(store.dtype)
            store.step = int(header["adam_steps"][key])
        cnt = header["counters"]
        self.step, self.env_steps, self.episodes = cnt["step"], cnt["env_steps"], cnt["episodes"]
        self.pending, self.skips = cnt["pending"], cnt["skips"]
        self.collect_rng = _rng_from(header["rng"]["collect"])
        self.train_rng = _rng_from(header["rng"]["train"])
        if with_replay and (path / "state.npz").exists():
            data = np.load(path / "state.npz")
            meta = json.loads(str(data["meta"]))
            self.replay = ReplayBuffer(self.config.replay_capacity)
            for i, m in enumerate(meta):
                self.replay.append(EpisodeRecord.build(
                    data[f"{i}_obs"], data[f"{i}_act"], data[f"{i}_rew"], data[f"{i}_cnt"],
                    m["program_id"], m["alpha"]))
            self.replay.rng = _rng_from(header["rng"]["replay"])


def load_checkpoint(path: str | Path, expect_action_hash: str | None = None):
    return ckpt.load(path, expect_action_hash)


def load_agent(path: str | Path, expect_action_hash: str | None = None):
    """Rebuild (world model, actor-critic, header) from a ``model.ckpt`` for inference."""
    path = Path(path)
    if path.is_dir():
        path = path / "model.ckpt"
    blocks, header = ckpt.load(path, expect_action_hash)
    wm_cfg = WorldModelConfig(**header["world_model"])
    ag_cfg = AgentConfig(**header["agent"])
    n_act = len(header["pass_names"])
    wm = WorldModel(wm_cfg, header["obs_dim"], n_act)
    ac = ActorCritic(ag_cfg, wm.feat_dim, n_act)
    for key, store in (("wm", wm.store), ("actor", ac.actor_store), ("critic", ac.critic_store)):
        for n, p in store.params.items():
            p.data = blocks[f"{key}/param/{n}"].astype(store.dtype)
    return wm, ac, header
