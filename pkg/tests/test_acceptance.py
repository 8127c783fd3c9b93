"""Acceptance checks. Each test records one PASS/FAIL line, printed in the
terminal summary under "acceptance"."""

import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE
from gridinvest.ddpg import AgentConfig, DDPGAgent
from gridinvest.env import PowerInvestEnv, reward
from gridinvest.harness import MetricsLog, RunConfig, evaluate, sweep, train
from gridinvest.nn import Dense, DenseNet, init_ddpg_style, serialize_net
from gridinvest.powersim import diffusion_step, dispatch_energy, technology_lcoes
from gridinvest.scenario import Scenario
from gridinvest.technology import HOURS_PER_QUARTER, RENEWABLES, TECHNOLOGIES, TechnologyParams
from gridinvest.toy import train_toy

N_SCENARIOS = 1000


def record(criterion, name, passed, detail):
    line = f"criterion {criterion}  {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


# --------------------------------------------------------------------------- 1


def test_reward_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    c = rng.uniform(0.0, 50.0, 10_000)
    l = rng.uniform(0.0, 1.0e5, 10_000)
    worst = 0.0
    for ci, li in zip(c, l):
        exact = -(1000 * Fraction(float(ci)) + Fraction(float(li)) / 1000)
        got = reward(float(ci), float(li))
        if exact != 0:
            worst = max(worst, abs(Fraction(got) - exact) / abs(exact))
    examples = [reward(0.0, 0.0) == 0.0, reward(0.5, 50.0) == -500.05, reward(0.0, 1000.0) == -1.0]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and all(examples) and elapsed < 1.0
    record(1, "reward oracle", ok, f"max rel err {float(worst):.2e} on 10000 pairs, examples {examples}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert all(examples)
    assert elapsed < 1.0


# --------------------------------------------------------------------------- 2


def random_scenario(rng, zero_emission=False):
    regions = ("UK", "IE")[: rng.integers(1, 3)]
    pool = [t for t in TECHNOLOGIES if t in RENEWABLES or t == "nuclear"] if zero_emission else list(TECHNOLOGIES)
    ids = rng.choice(pool, size=rng.integers(1, len(pool) + 1), replace=False)
    techs = []
    for tid in ids:
        tid = str(tid)
        renewable = tid in RENEWABLES
        techs.append(
            TechnologyParams(
                id=tid,
                capex=rng.uniform(100, 6000),
                opex_fixed=rng.uniform(0, 150),
                # a coarse grid so that marginal-cost ties occur
                fuel_cost=0.0 if renewable else float(rng.choice([0.0, 10.0, 30.0, rng.uniform(0, 120)])),
                emission_factor=0.0 if renewable or zero_emission else rng.uniform(0, 1.2),
                lifetime=rng.uniform(5, 60),
                capacity_factor=tuple(rng.uniform(0.05, 1.0, 4)),
                learning_rate=rng.uniform(0, 0.5),
                tax_rate=rng.uniform(0, 1.5),
                max_build=rng.uniform(0, 20),
                baseline_investment=10 ** rng.uniform(7, 11),
            )
        )
    n_r, n_t = len(regions), len(techs)
    n_hist = int(rng.integers(1, 5))
    n_ctrl = int(rng.integers(1, 5))
    start = 2010
    capacity = rng.uniform(0, 30, (n_r, n_t)) * (rng.random((n_r, n_t)) < 0.8)
    capacity[:, 0] += 1.0
    kw = dict(
        regions=regions,
        technologies=techs,
        start_year=start,
        control_start_year=start + n_hist,
        end_year=start + n_hist + n_ctrl,
        demand=rng.uniform(1e5, 5e7, (n_hist + n_ctrl, n_r, 4)),
        capex_floor_fraction=rng.uniform(0, 1),
        discount_rate=rng.uniform(0, 0.15),
    )
    if rng.random() < 0.5:
        history = capacity[None] * rng.uniform(0.5, 1.5, (n_hist, n_r, n_t))
        return Scenario(historical_mode="exogenous", historical_capacity=history, **kw)
    tau = rng.uniform(1, 20, (n_t, n_t))
    return Scenario(
        historical_mode="diffusion",
        initial_capacity=capacity,
        diffusion_sigma=rng.uniform(1, 100),
        diffusion_tau=(tau + tau.T) / 2,
        diffusion_substeps=int(rng.integers(1, 13)),
        **kw,
    )


def rollout(sc, rng):
    env = PowerInvestEnv(sc)
    env.reset()
    states = [env.state.copy()]
    done = False
    while not done:
        done = env.step(rng.uniform(-1, 1, env.act_dim)).done
        states.append(env.state.copy())
    return env.records, states


def dispatch_violations(sc, records):
    """Energy balance and merit order per region and quarter."""
    balance = merit = 0
    for rec in records:
        annual = np.zeros_like(rec.generation)
        for q in range(4):
            cf = sc.capacity_factor[:, q]
            gen, short = dispatch_energy(rec.capacity, cf, rec.demand[:, q], sc.merit_order)
            annual += gen
            available = rec.capacity * 1e3 * cf * HOURS_PER_QUARTER
            for r in range(sc.n_regions):
                if abs(gen[r].sum() + short[r] - rec.demand[r, q]) > 1e-6:
                    balance += 1
                if np.any(gen[r] > available[r] + 1e-6):
                    merit += 1
                for a in range(sc.n_tech):
                    for b in range(sc.n_tech):
                        cheaper = sc.marginal_cost[a] < sc.marginal_cost[b]
                        if cheaper and gen[r, b] > 0 and gen[r, a] < available[r, a] - 1e-6:
                            merit += 1
        if not np.allclose(annual, rec.generation, rtol=1e-12, atol=1e-6):
            balance += 1
        if np.any(np.abs(rec.generation.sum(axis=1) + rec.shortage - rec.demand.sum(axis=1)) > 4e-6):
            balance += 1
    return balance, merit


def simplex_violations(sc, records, rng):
    bad = 0
    lcoes = technology_lcoes(sc, sc.capex, with_tax=True)
    shares = rng.dirichlet(np.ones(sc.n_tech), size=sc.n_regions) * (rng.random((sc.n_regions, sc.n_tech)) < 0.8)
    shares[:, 0] += 1e-3
    shares /= shares.sum(axis=1, keepdims=True)
    for _ in range(20):
        shares = diffusion_step(shares, lcoes * rng.uniform(0.5, 1.5, sc.n_tech), rng.uniform(0.01, 1.0),
                                sc.diffusion_sigma, sc.diffusion_tau)
        if np.any(shares < 0) or np.any(np.abs(shares.sum(axis=1) - 1) > 1e-9):
            bad += 1
    if sc.historical_mode == "diffusion":
        for rec in records:
            if rec.controlled:
                break
            total = rec.capacity.sum(axis=1, keepdims=True)
            if np.any(np.abs((rec.capacity / total).sum(axis=1) - 1) > 1e-9) or np.any(rec.capacity < 0):
                bad += 1
    return bad


def test_simulator_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    counts = dict.fromkeys(("simplex", "energy balance", "merit order", "emissions", "tax dominance", "learning"), 0)
    for _ in range(N_SCENARIOS):
        sc = random_scenario(rng)
        records, states = rollout(sc, rng)
        balance, merit = dispatch_violations(sc, records)
        counts["energy balance"] += balance
        counts["merit order"] += merit
        counts["simplex"] += simplex_violations(sc, records, rng)
        co2 = [0.0] + [rec.cumulative_co2 for rec in records]
        counts["emissions"] += int(np.sum(np.diff(co2) < 0))
        counts["tax dominance"] += sum(rec.lcoe_with_tax < rec.lcoe_without_tax for rec in records)
        capex = np.array([s.current_capex for s in states])
        counts["learning"] += int(np.sum(np.diff(capex, axis=0) > 0))
        counts["learning"] += int(np.sum(capex > sc.capex) + np.sum(capex < sc.capex_floor_fraction * sc.capex - 1e-9))

        clean = random_scenario(rng, zero_emission=True)
        clean_records, _ = rollout(clean, rng)
        counts["emissions"] += sum(rec.cumulative_co2 != 0.0 for rec in clean_records)
    elapsed = time.perf_counter() - t0
    ok = not any(counts.values()) and elapsed < 120
    detail = ", ".join(f"{k} {v}" for k, v in counts.items())
    record(2, "simulator invariants", ok, f"{N_SCENARIOS} scenarios, violations: {detail}, {elapsed:.1f}s")
    assert counts == dict.fromkeys(counts, 0)
    assert elapsed < 120


# --------------------------------------------------------------------------- 3


def fd_rel_errors(loss, params, grads, h=1e-5, floor=1e-6):
    errs = []
    for p, g in zip(params, grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss()
            p[idx] = orig - h
            down = loss()
            p[idx] = orig
            num = (up - down) / (2 * h)
            errs.append(abs(num - g[idx]) / max(floor, abs(num) + abs(g[idx])))
    return errs


def random_net(rng):
    sizes = list(rng.integers(1, 7, size=rng.integers(2, 5)))
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = str(rng.choice(["identity", "relu", "tanh"]))
        layers.append(Dense(rng.normal(size=(fan_out, fan_in)) * 0.8, rng.normal(size=fan_out) * 0.5, act))
    return DenseNet(layers)


def near_relu_kink(net, x, margin=1e-3):
    _, (_, cache) = net.forward_cache(x)
    return any(layer.activation == "relu" and np.any(np.abs(z) < margin) for layer, (_, z, _) in zip(net.layers, cache))


def test_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    checked = 0
    while checked < 200:
        net = random_net(rng)
        x = rng.normal(size=(int(rng.integers(1, 5)), net.input_dim))
        if near_relu_kink(net, x):
            continue
        upstream = rng.normal(size=(len(x), net.output_dim))
        _, cache = net.forward_cache(x)
        grads, dx = net.backward(cache, upstream)
        xs = x.copy()

        def loss():
            return float(np.sum(upstream * net.forward(xs)))

        errs = fd_rel_errors(loss, net.params() + [xs], grads + [dx])
        worst = max(worst, max(errs))
        checked += 1

    # actor through critic on a scalar toy: mu(s) = tanh(w s + b)
    agent = DDPGAgent(1, 1, AgentConfig(actor_hidden=(4,), critic_hidden=(4,), minibatch_size=4, replay_capacity=16), seed=0)
    toy_worst = 0.0
    for _ in range(20):
        agent.actor = init_ddpg_style([1, 1], rng, output_activation="tanh", final_scale=1.0)
        agent.critic = DenseNet(
            [Dense(rng.normal(size=(4, 2)), rng.normal(size=4), "tanh"), Dense(rng.normal(size=(1, 4)), rng.normal(size=1))]
        )
        obs = rng.normal(size=(6, 1))
        _, grads = agent.actor_objective_and_grads(obs)
        errs = fd_rel_errors(lambda: agent.actor_objective_and_grads(obs)[0], agent.actor.params(), grads)
        toy_worst = max(toy_worst, max(errs))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and toy_worst < 1e-4 and elapsed < 60
    record(3, "gradient check", ok, f"200 random nets max rel err {worst:.2e}, actor-through-critic {toy_worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-4
    assert toy_worst < 1e-4
    assert elapsed < 60


# --------------------------------------------------------------------------- 4


@pytest.mark.slow
def test_toy_control_converges():
    from gridinvest.toy import episode_reward, optimal_action

    t0 = time.perf_counter()
    curve = train_toy(seed=0, iterations=200)
    starts = np.random.default_rng(12345).uniform(-2, 2, 200)
    optimum = float(np.mean([episode_reward(optimal_action, s) for s in starts]))
    threshold = optimum - 0.1 * abs(optimum)
    best_it, best = max(curve, key=lambda p: p[1])
    hit = next((it for it, value in curve if value >= threshold), None)
    elapsed = time.perf_counter() - t0
    ok = hit is not None and elapsed < 300
    record(4, "toy convergence", ok, f"optimum {optimum:.3f}, threshold {threshold:.3f}, first reached at iteration {hit}, "
           f"best {best:.3f} at {best_it}, {elapsed:.0f}s")
    assert hit is not None
    assert elapsed < 300


# --------------------------------------------------------------------------- 5 and 6

DESK_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    t0 = time.perf_counter()
    runs = []
    for seed in DESK_SEEDS:
        out = tmp_path_factory.mktemp(f"desk{seed}")
        train(RunConfig(preset="desk", seed=seed, out=str(out / "run")), log=lambda *_: None)
        report = evaluate(out / "run" / "final.ckpt", episodes=20, seed=seed, out=out / "eval")
        rewards = [float(r["reward_mean"]) for r in MetricsLog(out / "run" / "metrics.csv").read()]
        runs.append((report, rewards))
    return runs, time.perf_counter() - t0


@pytest.mark.slow
def test_desk_transition(desk_runs):
    runs, elapsed = desk_runs
    share = np.mean([rep["policy"]["zero_emission_share_final_years"] for rep, _ in runs])
    co2_ratio = np.mean([rep["co2_ratio_vs_random"] for rep, _ in runs])
    policy = np.mean([rep["policy"]["episode_reward"] for rep, _ in runs])
    rand = np.mean([rep["random"]["mean_episode_reward"] for rep, _ in runs])
    improvement = (policy - rand) / abs(rand)
    ok = share >= 0.8 and co2_ratio <= 0.5 and improvement >= 0.25 and elapsed <= 1800
    record(5, "desk transition", ok, f"zero-emission share {share:.3f} (>= 0.8), CO2 vs random {co2_ratio:.3f} (<= 0.5), "
           f"reward gain {improvement:.3f} (>= 0.25), 3 seeds in {elapsed / 60:.1f} min")
    assert share >= 0.8
    assert co2_ratio <= 0.5
    assert improvement >= 0.25
    assert elapsed <= 1800


def moving_average(values, window=5):
    """Trailing mean; the first entries average over what is available."""
    values = np.asarray(values, dtype=float)
    return np.array([values[max(0, i + 1 - window) : i + 1].mean() for i in range(len(values))])


@pytest.mark.slow
def test_desk_reward_levels_off(desk_runs):
    runs, _ = desk_runs
    curve = np.mean([rewards for _, rewards in runs], axis=0)
    q = max(1, len(curve) // 4)
    first, last = curve[:q].mean(), curve[-q:].mean()
    improvement = last - first
    ma = moving_average(curve)[-q:]
    spread = ma.max() - ma.min()
    ok = last > first and spread < 0.1 * improvement
    record(6, "reward levelling", ok, f"final-quartile MA5 spread {spread:.1f} vs 10% of improvement "
           f"{0.1 * improvement:.1f}, quartile means {first:.1f} -> {last:.1f}")
    assert last > first
    assert spread < 0.1 * improvement


# --------------------------------------------------------------------------- 7


@pytest.mark.slow
def test_sweep_robustness(tmp_path):
    t0 = time.perf_counter()
    results = sweep(RunConfig(preset="sweep", out=str(tmp_path / "sweep")), log=lambda *_: None)
    elapsed = time.perf_counter() - t0
    finals = {r["label"]: r["final_mean_reward"] for r in results}
    ok_status = all(r["status"] == "ok" for r in results)
    best = max(finals.values()) if ok_status else float("nan")
    gaps = {k: (best - v) / abs(best) for k, v in finals.items()} if ok_status else {}
    ok = ok_status and all(g <= 0.15 for g in gaps.values()) and elapsed <= 2700
    detail = ", ".join(f"{k} {finals[k]:.1f} (gap {gaps[k]:.3f})" for k in finals) if ok_status else str(results)
    record(7, "sweep robustness", ok, f"{detail}, {elapsed / 60:.1f} min")
    assert ok_status
    assert max(gaps.values()) <= 0.15
    assert elapsed <= 2700


# --------------------------------------------------------------------------- 8

SMALL_RUN = dict(
    actor_hidden=[32, 32],
    critic_hidden=[32, 32],
    samples_per_iteration=60,
    warmup_steps=30,
    minibatch_size=16,
    replay_capacity=1000,
    noise_anneal_steps=200,
)


def test_determinism_and_checkpoint_roundtrip(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = RunConfig(seed=123, iterations=3, end_year=2022, checkpoint_every=1, agent=dict(SMALL_RUN),
                        out=str(tmp_path / name))
        outs.append(train(cfg, log=lambda *_: None))
    metrics_same = (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
    ckpt_same = (outs[0] / "final.ckpt").read_bytes() == (outs[1] / "final.ckpt").read_bytes()

    data = (outs[0] / "final.ckpt").read_bytes()
    agent = DDPGAgent.from_bytes(data)
    extra = agent.checkpoint_extra
    roundtrip = agent.to_bytes(extra) == data
    nets_equal = all(
        serialize_net(getattr(agent, n)) == serialize_net(getattr(DDPGAgent.from_bytes(agent.to_bytes(extra)), n))
        for n in ("actor", "critic", "target_actor", "target_critic")
    )
    ok = metrics_same and ckpt_same and roundtrip and nets_equal
    record(8, "determinism", ok, f"metrics.csv identical {metrics_same}, final.ckpt identical {ckpt_same}, "
           f"checkpoint re-encodes bit-exactly {roundtrip and nets_equal}")
    assert metrics_same and ckpt_same
    assert roundtrip and nets_equal
