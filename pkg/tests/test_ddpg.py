import numpy as np
import pytest

from gridinvest.ddpg import (
    AgentConfig,
    Batch,
    DDPGAgent,
    OUNoise,
    ReplayBuffer,
    critic_target,
    soft_update,
    train_iteration,
)
from gridinvest.errors import CheckpointError, IncompatibleCheckpointError
from gridinvest.nn import Dense, DenseNet, init_ddpg_style, serialize_net
from gridinvest.toy import SteerEnv

SMALL = AgentConfig(
    actor_hidden=(8, 8),
    critic_hidden=(8, 8),
    samples_per_iteration=50,
    minibatch_size=16,
    replay_capacity=1000,
    warmup_steps=20,
    noise_anneal_steps=500,
)


def constant_net(in_dim, out_dim, value, activation="identity"):
    return DenseNet([Dense(np.zeros((out_dim, in_dim)), np.full(out_dim, value), activation)])


def make_batch(n=5, obs_dim=3, act_dim=2, reward=1.0, done=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(
        rng.normal(size=(n, obs_dim)),
        rng.uniform(-1, 1, (n, act_dim)),
        np.full(n, reward),
        rng.normal(size=(n, obs_dim)),
        np.full(n, done),
    )


# ----------------------------------------------------------------- acting


def test_act_greedy_deterministic():
    agent = DDPGAgent(4, 3, SMALL, seed=1)
    s = np.linspace(-1, 1, 4)
    assert agent.act(s).tobytes() == agent.act(s).tobytes()


def test_act_clipped_under_large_noise():
    agent = DDPGAgent(4, 3, SMALL.replace(noise_sigma=50.0, noise_sigma_final=50.0), seed=1)
    for _ in range(50):
        a = agent.act(np.ones(4), explore=True)
        assert np.all(np.abs(a) <= 1.0)


def test_fresh_actor_is_near_zero(uk_ie):
    from gridinvest.env import PowerInvestEnv

    agent = DDPGAgent(77, 16, AgentConfig(), seed=0)
    obs = np.random.default_rng(0).uniform(-0.5, 1.5, (32, 77))
    # output layer entries are within +-3e-3, so |a| <= tanh(3e-3 * (|h|_1 + 1))
    h = obs
    for layer in agent.actor.layers[:-1]:
        h = np.maximum(h @ layer.weight.T + layer.bias, 0.0)
    bound = np.tanh(3e-3 * (np.abs(h).sum(axis=1) + 1.0))
    assert np.all(np.abs(agent.actor(obs)).max(axis=1) <= bound)
    first = PowerInvestEnv(uk_ie).reset()
    assert np.abs(agent.act(first)).max() < 0.01


def test_act_dimension_mismatch():
    with pytest.raises(ValueError):
        DDPGAgent(4, 3, SMALL).act(np.ones(5))


def test_noise_anneals_linearly():
    agent = DDPGAgent(2, 1, SMALL.replace(noise_anneal_steps=100), seed=0)
    assert agent.current_noise_sigma() == 0.2
    agent.total_steps = 50
    assert agent.current_noise_sigma() == pytest.approx(0.125)
    agent.total_steps = 1000
    assert agent.current_noise_sigma() == pytest.approx(0.05)


def test_ou_noise_mean_reverts():
    noise = OUNoise(1, theta=0.15, sigma=0.0)
    noise.state = np.array([1.0])
    noise.sample(np.random.default_rng(0))
    assert noise.state[0] == pytest.approx(0.85)


# ----------------------------------------------------------------- targets and updates


def test_critic_target_examples():
    actor = constant_net(3, 2, 0.0, "tanh")
    critic = constant_net(5, 1, 2.0)
    batch = make_batch(reward=1.0)
    np.testing.assert_allclose(critic_target(batch, actor, critic, 0.9), 2.8)
    np.testing.assert_array_equal(critic_target(batch, actor, critic, 0.0), 1.0)
    done = make_batch(reward=1.0, done=1.0)
    np.testing.assert_array_equal(critic_target(done, actor, critic, 0.9), 1.0)


def test_critic_at_targets_has_zero_loss():
    agent = DDPGAgent(3, 2, SMALL.replace(gamma=0.0), seed=0)
    agent.critic = constant_net(5, 1, 1.5)
    batch = make_batch(reward=1.5)
    loss, grads = agent.critic_loss_and_grads(batch, critic_target(batch, agent.target_actor, agent.target_critic, 0.0))
    assert loss < 1e-12
    assert all(np.abs(g).max() < 1e-12 for g in grads)


def test_actor_gradient_matches_finite_difference():
    # scalar toy: mu(s) = tanh(w s + b), Q a one-hidden-layer tanh net on (s, a)
    rng = np.random.default_rng(3)
    agent = DDPGAgent(1, 1, SMALL, seed=0)
    agent.actor = init_ddpg_style([1, 1], rng, output_activation="tanh", final_scale=1.0)
    agent.critic = DenseNet(
        [Dense(rng.normal(size=(4, 2)), rng.normal(size=4), "tanh"), Dense(rng.normal(size=(1, 4)), [0.3])]
    )
    obs = rng.normal(size=(6, 1))
    _, grads = agent.actor_objective_and_grads(obs)
    h = 1e-5
    for p, g in zip(agent.actor.params(), grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = agent.actor_objective_and_grads(obs)[0]
            p[idx] = orig - h
            down = agent.actor_objective_and_grads(obs)[0]
            p[idx] = orig
            num = (up - down) / (2 * h)
            assert abs(num - g[idx]) <= 1e-4 * max(abs(num), 1e-6)


def test_update_warming_up_is_noop():
    agent = DDPGAgent(3, 2, SMALL, seed=0)
    before = serialize_net(agent.actor)
    assert agent.update().status == "warming up"
    assert agent.maybe_update() == []
    assert serialize_net(agent.actor) == before


def _filled_agent(seed=0):
    agent = DDPGAgent(3, 2, SMALL, seed=seed)
    rng = np.random.default_rng(99)
    for _ in range(40):
        agent.observe(rng.normal(size=3), rng.uniform(-1, 1, 2), float(rng.normal()), rng.normal(size=3), False)
    return agent


def test_updates_deterministic():
    a, b = _filled_agent(), _filled_agent()
    ra = [a.update() for _ in range(3)]
    rb = [b.update() for _ in range(3)]
    assert [(r.critic_loss, r.actor_objective) for r in ra] == [(r.critic_loss, r.actor_objective) for r in rb]
    assert serialize_net(a.actor) == serialize_net(b.actor)


def test_update_one_adam_step_per_net():
    agent = _filled_agent()
    agent.update()
    assert agent.actor_opt.t == agent.critic_opt.t == 1


def _linf(a, b):
    return max(np.abs(p - q).max() for p, q in zip(a.params(), b.params()))


def test_target_lag_invariant():
    agent = _filled_agent()
    tau = agent.config.tau
    for _ in range(5):
        agent.update()
    for _ in range(10):
        prev_target = agent.target_critic.copy()
        agent.update()
        # the target moved toward the online net, which itself just moved
        bound = (1 - tau) * _linf(prev_target, agent.critic) + 1e-12
        assert _linf(agent.target_critic, agent.critic) <= bound


def test_soft_update_examples():
    online = DenseNet([Dense([[2.0]], [2.0])])
    target = DenseNet([Dense([[0.0]], [0.0])])
    soft_update(target, online, 0.5)
    assert target.layers[0].weight[0, 0] == 1.0
    soft_update(target, online, 1.0)
    assert serialize_net(target) == serialize_net(online)
    frozen = DenseNet([Dense([[5.0]], [5.0])])
    soft_update(frozen, online, 0.0)
    assert frozen.layers[0].weight[0, 0] == 5.0
    with pytest.raises(ValueError):
        soft_update(DenseNet([Dense(np.zeros((2, 1)), np.zeros(2))]), online, 0.5)


# ----------------------------------------------------------------- replay


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add([i], [0.0], float(i), [i + 1], False)
    assert len(buf) == 3 and buf.inserted == 5
    assert sorted(buf.reward[: len(buf)]) == [2.0, 3.0, 4.0]


def test_replay_samples_only_inserted():
    buf = ReplayBuffer(100, 1, 1)
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))
    for i in range(3):
        buf.add([i], [0.0], float(i + 1), [i], False)
    batch = buf.sample(200, np.random.default_rng(0))
    assert set(batch.reward) <= {1.0, 2.0, 3.0}


def test_replay_sampling_reproducible():
    buf = ReplayBuffer(50, 1, 1)
    for i in range(50):
        buf.add([i], [0.0], float(i), [i], False)
    a = buf.sample(10, np.random.default_rng(5))
    b = buf.sample(10, np.random.default_rng(5))
    assert a.reward.tobytes() == b.reward.tobytes()


def test_replay_rejects_nan_reward():
    with pytest.raises(ValueError):
        ReplayBuffer(4, 1, 1).add([0], [0], float("nan"), [0], False)


# ----------------------------------------------------------------- training loop


def test_train_iteration_report():
    env = SteerEnv(seed=0)
    agent = DDPGAgent(1, 1, SMALL, seed=0)
    total = 0
    for it in range(3):
        rep = train_iteration(env, agent, it, env_steps_before=total)
        assert rep.reward_min <= rep.reward_mean <= rep.reward_max
        assert SMALL.samples_per_iteration <= rep.steps < SMALL.samples_per_iteration + env.episode_length
        assert rep.env_steps_total == total + rep.steps
        total = rep.env_steps_total
    assert rep.updates > 0 and np.isfinite(rep.critic_loss)


def test_training_reproducible():
    reports = []
    for _ in range(2):
        env = SteerEnv(seed=4)
        agent = DDPGAgent(1, 1, SMALL, seed=4)
        reports.append([train_iteration(env, agent, i) for i in range(3)])
    for a, b in zip(*reports):
        assert (a.reward_mean, a.critic_loss, a.actor_objective) == (b.reward_mean, b.critic_loss, b.actor_objective)


def test_zero_learning_rate_freezes_policy():
    agent = DDPGAgent(1, 1, SMALL.replace(actor_lr=0.0, critic_lr=0.0), seed=0)
    before = serialize_net(agent.actor)
    env = SteerEnv(seed=0)
    for i in range(3):
        train_iteration(env, agent, i)
    assert serialize_net(agent.actor) == before


# ----------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    agent = _filled_agent()
    for _ in range(3):
        agent.update()
    path = tmp_path / "agent.ckpt"
    agent.save(path, extra={"iteration": 3})
    back = DDPGAgent.load(path, expect_hash=agent.config_hash)
    assert back.to_bytes({"iteration": 3}) == path.read_bytes()
    for name in ("actor", "critic", "target_actor", "target_critic"):
        assert serialize_net(getattr(back, name)) == serialize_net(getattr(agent, name))
    assert back.rng.uniform() == agent.rng.uniform()
    assert back.checkpoint_extra == {"iteration": 3}


def test_checkpoint_refuses_other_config(tmp_path):
    agent = DDPGAgent(3, 2, SMALL)
    data = agent.to_bytes()
    other = DDPGAgent(3, 2, SMALL.replace(gamma=0.5))
    with pytest.raises(IncompatibleCheckpointError):
        DDPGAgent.from_bytes(data, expect_hash=other.config_hash)
    with pytest.raises(IncompatibleCheckpointError):
        DDPGAgent.from_bytes(data, obs_dim=4, act_dim=2)
    with pytest.raises(CheckpointError):
        DDPGAgent.from_bytes(data[:-10])


@pytest.mark.parametrize(
    "changes",
    [dict(gamma=1.5), dict(tau=0.0), dict(minibatch_size=0), dict(noise="pink"), dict(actor_lr=-1.0)],
)
def test_config_validation(changes):
    with pytest.raises(ValueError):
        SMALL.replace(**changes)
