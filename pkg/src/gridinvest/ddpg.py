"""DDPG agent: actor/critic with target networks, replay buffer and exploration noise."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, IncompatibleCheckpointError
from .nn import AdamState, adam_step, dump_container, init_ddpg_style, load_container


@dataclass
class AgentConfig:
    """Agent hyperparameters.

    ``samples_per_iteration`` is the number of environment steps collected per
    training iteration; ``minibatch_size`` is the SGD batch.
    ``reward_scale`` multiplies rewards inside the critic target only.
    """

    actor_hidden: tuple = (400, 300)
    critic_hidden: tuple = (400, 300)
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    samples_per_iteration: int = 40_000
    minibatch_size: int = 64
    replay_capacity: int = 1_000_000
    warmup_steps: int = 1_000
    updates_per_step: float = 1.0
    noise: str = "ou"
    noise_theta: float = 0.15
    noise_sigma: float = 0.2
    noise_sigma_final: float = 0.05
    noise_anneal_steps: int = 400_000
    reward_scale: float = 1.0

    def __post_init__(self):
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.minibatch_size < 1 or self.samples_per_iteration < 1 or self.replay_capacity < 1:
            raise ValueError("batch sizes and capacities must be positive")
        if self.minibatch_size > self.replay_capacity:
            raise ValueError("minibatch_size cannot exceed replay_capacity")
        if self.noise not in ("ou", "gaussian"):
            raise ValueError(f"noise must be 'ou' or 'gaussian', got {self.noise!r}")
        if self.updates_per_step < 0 or self.warmup_steps < 0 or self.noise_anneal_steps < 0:
            raise ValueError("updates_per_step, warmup_steps and noise_anneal_steps must be >= 0")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def config_hash(config, obs_dim, act_dim):
    blob = json.dumps({"config": config.to_dict(), "obs_dim": obs_dim, "act_dim": act_dim}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity, obs_dim, act_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, act_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self.next_index = 0
        self.inserted = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done):
        if not math.isfinite(reward):
            raise ValueError(f"non-finite reward {reward}")
        i = self.next_index
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.next_index = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def sample(self, n, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])


class OUNoise:
    """Ornstein-Uhlenbeck process x += theta * (mu - x) + sigma * N(0, 1), unit time step."""

    def __init__(self, size, theta=0.15, sigma=0.2, mu=0.0):
        self.size = size
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self.reset()

    def reset(self):
        self.state = np.full(self.size, self.mu, dtype=float)

    def sample(self, rng):
        self.state = self.state + self.theta * (self.mu - self.state) + self.sigma * rng.standard_normal(self.size)
        return self.state


class GaussianNoise:
    def __init__(self, size, sigma=0.2):
        self.size = size
        self.sigma = sigma
        self.state = np.zeros(size)

    def reset(self):
        pass

    def sample(self, rng):
        return self.sigma * rng.standard_normal(self.size)


def soft_update(target, online, tau):
    """theta' <- tau * theta + (1 - tau) * theta' for every parameter, in place."""
    t_params, o_params = target.params(), online.params()
    if [p.shape for p in t_params] != [p.shape for p in o_params]:
        raise ValueError("target and online networks differ in shape")
    for tp, op in zip(t_params, o_params):
        tp *= 1.0 - tau
        tp += tau * op
    return target


def critic_target(batch, target_actor, target_critic, gamma, reward_scale=1.0):
    """Bellman targets y = r + gamma * (1 - done) * Q'(s', mu'(s'))."""
    next_action = target_actor.forward(batch.next_obs)
    next_q = target_critic.forward(np.hstack([batch.next_obs, next_action]))[:, 0]
    return reward_scale * batch.reward + gamma * (1.0 - batch.done) * next_q


@dataclass
class UpdateResult:
    status: str
    critic_loss: float | None = None
    actor_objective: float | None = None


class DDPGAgent:
    """Deterministic actor with tanh output, Q critic on concatenated (state, action)."""

    def __init__(self, obs_dim, act_dim, config=None, seed=0):
        self.config = config or AgentConfig()
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        cfg = self.config
        self.actor = init_ddpg_style(
            [self.obs_dim, *cfg.actor_hidden, self.act_dim], self.rng, output_activation="tanh"
        )
        self.critic = init_ddpg_style([self.obs_dim + self.act_dim, *cfg.critic_hidden, 1], self.rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = AdamState.like(self.actor.params(), lr=cfg.actor_lr)
        self.critic_opt = AdamState.like(self.critic.params(), lr=cfg.critic_lr)
        self.buffer = ReplayBuffer(cfg.replay_capacity, self.obs_dim, self.act_dim)
        if cfg.noise == "ou":
            self.noise = OUNoise(self.act_dim, cfg.noise_theta, cfg.noise_sigma)
        else:
            self.noise = GaussianNoise(self.act_dim, cfg.noise_sigma)
        self.total_steps = 0
        self.updates = 0
        self._update_credit = 0.0

    @property
    def config_hash(self):
        return config_hash(self.config, self.obs_dim, self.act_dim)

    @property
    def warming_up(self):
        cfg = self.config
        return self.total_steps < cfg.warmup_steps or len(self.buffer) < cfg.minibatch_size

    def current_noise_sigma(self):
        cfg = self.config
        if cfg.noise_anneal_steps == 0:
            return cfg.noise_sigma_final
        frac = min(1.0, self.total_steps / cfg.noise_anneal_steps)
        return cfg.noise_sigma + (cfg.noise_sigma_final - cfg.noise_sigma) * frac

    def act(self, obs, explore=False):
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"observation shape {obs.shape} != ({self.obs_dim},)")
        action = self.actor.forward(obs)
        if explore:
            self.noise.sigma = self.current_noise_sigma()
            action = action + self.noise.sample(self.rng)
        return np.clip(action, -1.0, 1.0)

    def random_action(self):
        return self.rng.uniform(-1.0, 1.0, size=self.act_dim)

    def observe(self, obs, action, reward, next_obs, done):
        self.buffer.add(obs, action, reward, next_obs, done)
        self.total_steps += 1

    # ----------------------------------------------------------------- learning

    def critic_loss_and_grads(self, batch, targets):
        inputs = np.hstack([batch.obs, batch.action])
        q, cache = self.critic.forward_cache(inputs)
        err = q[:, 0] - targets
        loss = float(np.mean(err * err))
        grads, _ = self.critic.backward(cache, (2.0 / len(batch)) * err[:, None], input_grad=False)
        return loss, grads

    def actor_objective_and_grads(self, obs, sign=1.0):
        """Mean Q(s, mu(s)) and the gradient of ``sign`` * mean Q w.r.t. actor parameters.

        sign=1 gives the ascent direction; learn() passes -1 to get a loss gradient.
        """
        obs = np.atleast_2d(obs)
        action, actor_cache = self.actor.forward_cache(obs)
        q, critic_cache = self.critic.forward_cache(np.hstack([obs, action]))
        n = len(obs)
        _, d_input = self.critic.backward(critic_cache, np.full((n, 1), sign / n), param_grads=False)
        grads, _ = self.actor.backward(actor_cache, d_input[:, self.obs_dim :], input_grad=False)
        return float(np.mean(q)), grads

    def learn(self, batch):
        """One critic step, one actor step, then soft target updates."""
        cfg = self.config
        targets = critic_target(batch, self.target_actor, self.target_critic, cfg.gamma, cfg.reward_scale)
        critic_loss, critic_grads = self.critic_loss_and_grads(batch, targets)
        adam_step(self.critic.params(), critic_grads, self.critic_opt)
        objective, actor_grads = self.actor_objective_and_grads(batch.obs, sign=-1.0)
        adam_step(self.actor.params(), actor_grads, self.actor_opt)
        soft_update(self.target_critic, self.critic, cfg.tau)
        soft_update(self.target_actor, self.actor, cfg.tau)
        self.updates += 1
        return UpdateResult("ok", critic_loss, objective)

    def update(self, batch=None):
        """Sample a minibatch (unless given) and learn from it; no-op while warming up."""
        if batch is None:
            if self.warming_up:
                return UpdateResult("warming up")
            batch = self.buffer.sample(self.config.minibatch_size, self.rng)
        return self.learn(batch)

    def maybe_update(self):
        """Run the number of updates owed by the update-to-sample ratio for one env step."""
        results = []
        if self.warming_up:
            return results
        self._update_credit += self.config.updates_per_step
        while self._update_credit >= 1.0:
            self._update_credit -= 1.0
            results.append(self.update())
        return results

    # ----------------------------------------------------------------- checkpoints

    def state_dict(self, extra=None):
        entries = {
            "actor": self.actor,
            "critic": self.critic,
            "target_actor": self.target_actor,
            "target_critic": self.target_critic,
        }
        for name, opt in (("actor", self.actor_opt), ("critic", self.critic_opt)):
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                entries[f"adam/{name}/m/{i}"] = m
                entries[f"adam/{name}/v/{i}"] = v
        entries["noise_state"] = np.asarray(self.noise.state, dtype=float)
        entries["meta"] = {
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "seed": self.seed,
            "total_steps": self.total_steps,
            "updates": self.updates,
            "update_credit": self._update_credit,
            "adam_t": {"actor": self.actor_opt.t, "critic": self.critic_opt.t},
            "rng_state": self.rng.bit_generator.state,
            "extra": extra or {},
        }
        return entries

    def to_bytes(self, extra=None):
        return dump_container(self.state_dict(extra))

    def save(self, path, extra=None):
        data = self.to_bytes(extra)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    @classmethod
    def from_bytes(cls, data, expect_hash=None, obs_dim=None, act_dim=None):
        """Rebuild an agent from a checkpoint.

        Raises IncompatibleCheckpointError if dims or config hash disagree with
        the expectations given. The replay buffer is not part of a checkpoint.
        """
        entries = load_container(data)
        try:
            meta = entries["meta"]
            config = AgentConfig(**meta["config"])
        except (KeyError, TypeError) as err:
            raise CheckpointError(f"checkpoint lacks agent metadata: {err}") from None
        if obs_dim is not None and (meta["obs_dim"], meta["act_dim"]) != (obs_dim, act_dim):
            raise IncompatibleCheckpointError(
                f"checkpoint dims obs={meta['obs_dim']} act={meta['act_dim']} "
                f"do not match environment obs={obs_dim} act={act_dim}"
            )
        if expect_hash is not None and meta["config_hash"] != expect_hash:
            raise IncompatibleCheckpointError("agent config differs from the checkpoint's (hash mismatch)")
        agent = cls(meta["obs_dim"], meta["act_dim"], config, seed=meta["seed"])
        if agent.config_hash != meta["config_hash"]:
            raise CheckpointError("stored config hash does not match stored config")
        agent.actor = entries["actor"]
        agent.critic = entries["critic"]
        agent.target_actor = entries["target_actor"]
        agent.target_critic = entries["target_critic"]
        for name, opt, net in (("actor", agent.actor_opt, agent.actor), ("critic", agent.critic_opt, agent.critic)):
            opt.m = [entries[f"adam/{name}/m/{i}"].copy() for i in range(len(net.params()))]
            opt.v = [entries[f"adam/{name}/v/{i}"].copy() for i in range(len(net.params()))]
            opt.t = meta["adam_t"][name]
        agent.noise.state = entries["noise_state"].copy()
        agent.total_steps = meta["total_steps"]
        agent.updates = meta["updates"]
        agent._update_credit = meta["update_credit"]
        agent.rng.bit_generator.state = meta["rng_state"]
        agent.checkpoint_extra = meta.get("extra", {})
        return agent

    @classmethod
    def load(cls, path, **kwargs):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), **kwargs)


# --------------------------------------------------------------------------- training loop


@dataclass
class IterationReport:
    iteration: int
    steps: int
    episodes: int
    env_steps_total: int
    reward_min: float
    reward_mean: float
    reward_max: float
    critic_loss: float
    actor_objective: float
    updates: int
    episode_rewards: list = field(default_factory=list, repr=False)


def run_episode(env, policy):
    """Roll out one episode with ``policy(obs) -> action``; returns (total reward, results)."""
    obs = env.reset()
    total, results, done = 0.0, [], False
    while not done:
        res = env.step(policy(obs))
        results.append(res)
        total += res.reward
        done = res.done
        obs = res.observation
    return total, results


def train_iteration(env, agent, iteration=0, samples=None, env_steps_before=0):
    """Collect ``samples`` env steps (default ``samples_per_iteration``), finishing the
    last episode, with updates interleaved at the configured ratio."""
    samples = agent.config.samples_per_iteration if samples is None else samples
    steps = 0
    episode_rewards = []
    losses, objectives = [], []
    updates_before = agent.updates
    while steps < samples:
        obs = env.reset()
        agent.noise.reset()
        total, done = 0.0, False
        while not done:
            if agent.warming_up:
                action = agent.random_action()
            else:
                action = agent.act(obs, explore=True)
            res = env.step(action)
            agent.observe(obs, action, res.reward, res.observation, res.done)
            for result in agent.maybe_update():
                losses.append(result.critic_loss)
                objectives.append(result.actor_objective)
            total += res.reward
            obs = res.observation
            done = res.done
            steps += 1
        episode_rewards.append(total)
    rewards = np.array(episode_rewards)
    return IterationReport(
        iteration=iteration,
        steps=steps,
        episodes=len(episode_rewards),
        env_steps_total=env_steps_before + steps,
        reward_min=float(rewards.min()),
        reward_mean=float(rewards.mean()),
        reward_max=float(rewards.max()),
        critic_loss=float(np.mean(losses)) if losses else float("nan"),
        actor_objective=float(np.mean(objectives)) if objectives else float("nan"),
        updates=agent.updates - updates_before,
        episode_rewards=episode_rewards,
    )
