"""One-dimensional steering task used to sanity-check the learner.

State s starts uniform in [-2, 2]; the action a in [-1, 1] moves it to s + a;
each step pays -s^2 for the state before the move. The greedy controller
a = clip(-s, -1, 1) is optimal, with expected episode reward
-(E[s0^2] + E[(|s0| - 1)^2; |s0| > 1]) = -(4/3 + 1/6) = -1.5.
"""

import numpy as np

from .env import StepResult
from .errors import EpisodeLifecycleError

OPTIMAL_EXPECTED_REWARD = -1.5


class SteerEnv:
    obs_dim = 1
    act_dim = 1

    def __init__(self, horizon=10, seed=0):
        self.horizon = horizon
        self.episode_length = horizon
        self.rng = np.random.default_rng(seed)
        self.done = True

    def reset(self, seed=None, start=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.s = float(self.rng.uniform(-2.0, 2.0)) if start is None else float(start)
        self.t = 0
        self.done = False
        return np.array([self.s / 2.0])

    def step(self, action):
        if self.done:
            raise EpisodeLifecycleError("episode is done; call reset()")
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        r = -self.s * self.s
        self.s += a
        self.t += 1
        self.done = self.t >= self.horizon
        return StepResult(np.array([self.s / 2.0]), r, self.done, {})


def optimal_action(obs):
    return np.clip(-2.0 * np.asarray(obs, dtype=float), -1.0, 1.0)


def episode_reward(policy, start, horizon=10):
    env = SteerEnv(horizon)
    obs = env.reset(start=start)
    total = 0.0
    while not env.done:
        res = env.step(policy(obs))
        total += res.reward
        obs = res.observation
    return total


def toy_config(**overrides):
    """Small-network agent settings that solve the steering task in ~200 iterations."""
    from .ddpg import AgentConfig

    base = dict(
        actor_hidden=(32, 32),
        critic_hidden=(64, 64),
        gamma=0.9,
        tau=0.005,
        actor_lr=3e-4,
        critic_lr=1e-3,
        samples_per_iteration=100,
        minibatch_size=64,
        replay_capacity=50_000,
        warmup_steps=500,
        noise_anneal_steps=10_000,
    )
    base.update(overrides)
    return AgentConfig(**base)


def train_toy(seed=0, iterations=200, eval_every=10, eval_starts=None, config=None):
    """Train on the steering task; returns [(iteration, greedy mean reward over eval_starts)]."""
    from .ddpg import DDPGAgent, train_iteration

    if eval_starts is None:
        eval_starts = np.random.default_rng(12345).uniform(-2.0, 2.0, 200)
    env = SteerEnv(seed=seed + 100)
    agent = DDPGAgent(1, 1, config or toy_config(), seed=seed)
    history = []
    for it in range(iterations):
        train_iteration(env, agent, it)
        if (it + 1) % eval_every == 0:
            score = np.mean([episode_reward(agent.act, s) for s in eval_starts])
            history.append((it + 1, float(score)))
    return history
