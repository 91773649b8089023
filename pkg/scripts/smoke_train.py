#!/usr/bin/env python3
"""Train on the synthetic smoke corpus and compare argmax, random and optimal geomeans.

    python scripts/smoke_train.py --steps 2000 --seed 0
"""
import argparse
import time

import numpy as np

from passpilot.agents import LatentPolicy, UniformPolicy, policy_rollout
from passpilot.config import RunConfig
from passpilot.env import CompilerEnv
from passpilot.evaluation import exact_optimum, gap_fraction, geomean_reduction
from passpilot.synthetic import smoke_corpus
from passpilot.training import Trainer


def argmax_geomean(trainer, env, corpus):
    policy = LatentPolicy(trainer.wm, trainer.ac)
    finals = [policy_rollout(env, p, policy, "argmax").counts[-1] for p in corpus]
    return geomean_reduction(p.baseline_count / c for p, c in zip(corpus, finals))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--actor-lr", type=float, default=None)
    ap.add_argument("--every", type=int, default=250, help="report interval in updates")
    ap.add_argument("--metrics", default=None, help="optional metrics CSV path")
    args = ap.parse_args()

    cfg = RunConfig(seed=args.seed)
    cfg.train.train_steps = args.steps
    if args.actor_lr is not None:
        cfg.agent.lr = args.actor_lr
    env = CompilerEnv(cfg.env.env_config())
    corpus = smoke_corpus(cfg.corpus.synthetic_programs, cfg.corpus.synthetic_seed)
    trainer = Trainer(env, corpus, cfg.world_model, cfg.agent, cfg.train_config())
    t0 = time.time()

    def progress(tr, row):
        if tr.step % args.every == 0:
            g = argmax_geomean(tr, env, corpus)
            print(f"step {tr.step:5d}  {time.time() - t0:6.0f}s  loss {row['loss']:.2f}  "
                  f"reward nll {row['nll_reward']:.4f}  entropy {row['policy_entropy']:.3f}  "
                  f"argmax geomean {g:.3f}", flush=True)

    trainer.run(metrics_path=args.metrics, on_update=progress)

    rng = np.random.default_rng(123)
    rand = geomean_reduction(
        p.baseline_count / policy_rollout(env, p, UniformPolicy(env.n_actions), "sample",
                                          rng=rng).counts[-1]
        for p in corpus for _ in range(20))
    oracle = geomean_reduction(p.baseline_count / exact_optimum(p, 45) for p in corpus)
    agent = argmax_geomean(trainer, env, corpus)
    print(f"random {rand:.3f}  oracle {oracle:.3f}  agent {agent:.3f}  "
          f"gap closed {gap_fraction(agent, rand, oracle):.2f}  ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
