"""Step-by-step policies driven by real observations, and episode rollouts."""
from __future__ import annotations

import numpy as np

from passpilot.autodiff.tensor import no_grad
from passpilot.env import CompilerEnv
from passpilot.replay import DEFAULT_ALPHA, EpisodeRecord

MODES = ("sample", "argmax")


class UniformPolicy:
    """Uniformly random actions; ignores observations."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def reset(self, obs, rng=None) -> None:
        pass

    def act(self, rng: np.random.Generator, mode: str = "sample") -> int:
        return int(rng.integers(self.n_actions))

    def update(self, action: int, obs, rng=None) -> None:
        pass


class SequencePolicy:
    """Replays a fixed action list (falls back to action 0 when exhausted)."""

    def __init__(self, actions):
        self.actions = [int(a) for a in actions]
        self._i = 0

    def reset(self, obs, rng=None) -> None:
        self._i = 0

    def act(self, rng=None, mode: str = "argmax") -> int:
        a = self.actions[self._i] if self._i < len(self.actions) else 0
        self._i += 1
        return a

    def update(self, action: int, obs, rng=None) -> None:
        pass


class LatentPolicy:
    """Actor over the posterior latent, filtered on real observations.

    In ``argmax`` mode the latent itself is the posterior mode, so two
    rollouts on the same program are identical.
    """

    def __init__(self, world_model, actor_critic):
        self.wm = world_model
        self.ac = actor_critic
        self.n_actions = actor_critic.n_actions
        self.state = None
        self._mode = "argmax"

    def reset(self, obs, rng=None, mode: str = "argmax") -> None:
        self._mode = mode
        with no_grad():
            self.state = self.wm.posterior(self.wm.initial(1), None,
                                           np.asarray(obs, self.wm.dtype)[None], rng,
                                           mode=(mode == "argmax"))

    def probs(self) -> np.ndarray:
        return self.ac.probs(self.state.features().data)[0]

    def act(self, rng: np.random.Generator, mode: str = "argmax") -> int:
        p = self.probs()
        if mode == "argmax":
            return int(np.argmax(p))
        return int(self.ac.sample(self.state.features().data, rng)[0])

    def update(self, action: int, obs, rng=None) -> None:
        with no_grad():
            self.state = self.wm.posterior(self.state, [int(action)],
                                           np.asarray(obs, self.wm.dtype)[None], rng,
                                           mode=(self._mode == "argmax"))


def _reset(policy, obs, rng, mode):
    if isinstance(policy, LatentPolicy):
        policy.reset(obs, rng, mode)
    else:
        policy.reset(obs, rng)


def policy_rollout(env: CompilerEnv, program, policy, mode: str = "argmax", seed: int = 0,
                   baseline_count: int | None = None, alpha: float = DEFAULT_ALPHA,
                   epsilon: float = 0.0, rng: np.random.Generator | None = None) -> EpisodeRecord:
    """One full episode; ``epsilon`` substitutes uniform-random actions at that rate."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = np.random.default_rng(seed) if rng is None else rng
    obs = env.reset(program, baseline_count)
    _reset(policy, obs, rng, mode)
    observations, actions, rewards, counts = [obs], [], [], [env.count]
    done = False
    while not done:
        a = policy.act(rng, mode)
        if epsilon > 0 and rng.random() < epsilon:
            a = int(rng.integers(env.n_actions))
        res = env.step(a)
        done = res.done
        observations.append(res.observation)
        actions.append(a)
        rewards.append(res.reward)
        counts.append(res.info["instruction_count"])
        if not done:
            policy.update(a, res.observation, rng)
    return EpisodeRecord.build(observations, actions, rewards, counts, env.program_id, alpha)
