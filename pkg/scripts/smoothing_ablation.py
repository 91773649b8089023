#!/usr/bin/env python3
"""Reward-smoothing ablation: world-model reward error with and without smoothing.

Trains the world model alone on uniform-random episodes for each alpha and
reports the one-step reward error against the raw per-step reward, which is
what an agent ultimately sums. Smoothing spreads each sparse reward over the
following steps, so a model trained on it is compared on the cumulative sum
over the episode as well.

    python scripts/smoothing_ablation.py --steps 1000 --alphas 0 0.6 0.9
"""
import argparse

import numpy as np

from passpilot.env import ActionSpace, CompilerEnv, EnvConfig, rollout
from passpilot.replay import ReplayBuffer
from passpilot.synthetic import SMOKE_PASS_NAMES, smoke_corpus
from passpilot.world_model import WorldModel, WorldModelConfig


def episode_predictions(wm, episodes):
    out = []
    for ep in episodes:
        out.append(wm.predict_rewards(ep.observations[0], ep.actions.tolist()))
    return np.stack(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.6])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    env = CompilerEnv(EnvConfig(backend="synthetic", action_space=ActionSpace(SMOKE_PASS_NAMES)))
    corpus = smoke_corpus(10, 0)
    for alpha in args.alphas:
        rng = np.random.default_rng(args.seed)
        buf = ReplayBuffer(100_000, seed=args.seed)
        for i in range(200):
            buf.append(rollout(env, corpus[i % 10], rng.integers(0, 5, size=45), alpha=alpha))
        held = [rollout(env, corpus[i % 10], rng.integers(0, 5, size=45), alpha=alpha)
                for i in range(20)]
        wm = WorldModel(WorldModelConfig(), env.obs_dim, env.n_actions, seed=args.seed)
        train_rng = np.random.default_rng(args.seed + 1)
        for _ in range(args.steps):
            wm.train_step(buf.sample(8, 45, train_rng), train_rng)
        pred = episode_predictions(wm, held)
        raw = np.stack([ep.rewards_raw for ep in held])
        total_err = np.abs(pred.sum(1) - raw.sum(1)).mean()
        step_err = np.mean((pred - raw) ** 2)
        print(f"alpha {alpha:.2f}  per-step MSE vs raw {step_err:.5f}  "
              f"episode-sum abs error {total_err:.4f}")


if __name__ == "__main__":
    main()
