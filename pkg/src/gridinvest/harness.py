"""Experiment orchestration: presets, run manifests, metrics logs, training,
evaluation, sweeps, baselines and figure-data export.

Every run directory is self-describing: ``manifest.json`` records the resolved
configuration, the scenario hash and the code version, and a copy of the
scenario file sits next to it.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import platform
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ddpg import AgentConfig, DDPGAgent, run_episode, train_iteration
from .env import PowerInvestEnv, episode_metrics, read_trace_csv, write_trace_csv
from .errors import GridInvestError, ScenarioError
from .powersim import run_baseline
from .scenario import load_scenario, parse_scenario

THREADS_ENV = "GRIDINVEST_THREADS"

SWEEP_GRID = ((400, 300), (300, 500), (256, 256))

PRESETS = {
    # control 2017-2030, sized so the acceptance suite fits a desk budget
    "desk": dict(
        end_year=2030,
        iterations=14,
        checkpoint_every=5,
        agent=dict(
            samples_per_iteration=2000,
            replay_capacity=100_000,
            warmup_steps=2000,
            noise_anneal_steps=12_000,
            reward_scale=1e-3,
        ),
    ),
    # truncated horizon used for hyperparameter sweeps
    "sweep": dict(
        end_year=2020,
        iterations=15,
        checkpoint_every=5,
        agent=dict(
            samples_per_iteration=2000,
            replay_capacity=100_000,
            warmup_steps=2000,
            noise_anneal_steps=15_000,
            reward_scale=1e-3,
        ),
    ),
    # full horizon, ~400k environment steps
    "paper": dict(
        end_year=2050,
        iterations=10,
        checkpoint_every=1,
        agent=dict(
            samples_per_iteration=40_000,
            replay_capacity=1_000_000,
            warmup_steps=10_000,
            noise_anneal_steps=200_000,
            reward_scale=1e-3,
        ),
    ),
}


def code_version():
    """Package version plus a digest of the package sources."""
    digest = hashlib.sha256()
    pkg = resources.files("gridinvest")
    for name in sorted(p.name for p in pkg.iterdir() if p.name.endswith(".py")):
        digest.update(name.encode())
        digest.update((pkg / name).read_bytes())
    return f"{__version__}+{digest.hexdigest()[:12]}"


@dataclass
class RunConfig:
    scenario: str = "uk_ie"
    preset: str = "desk"
    seed: int = 0
    iterations: int | None = None
    out: str = "runs/train"
    checkpoint_every: int | None = None
    end_year: int | None = None
    agent: dict = field(default_factory=dict)
    sweep_grid: tuple = SWEEP_GRID

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ScenarioError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ScenarioError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        self.seed = int(self.seed)
        self.sweep_grid = tuple(tuple(int(w) for w in g) for g in self.sweep_grid)
        if not self.sweep_grid:
            raise ScenarioError("sweep grid must not be empty")

    def resolved(self):
        """Fill unset fields from the preset; returns a new RunConfig."""
        p = PRESETS[self.preset]
        agent = dict(p["agent"])
        agent.update(self.agent)
        return dataclasses.replace(
            self,
            iterations=p["iterations"] if self.iterations is None else int(self.iterations),
            checkpoint_every=p["checkpoint_every"] if self.checkpoint_every is None else int(self.checkpoint_every),
            end_year=p["end_year"] if self.end_year is None else int(self.end_year),
            agent=agent,
        )

    def agent_config(self):
        try:
            return AgentConfig(**self.agent)
        except (TypeError, ValueError) as err:
            raise ScenarioError(f"invalid agent configuration: {err}") from None

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["sweep_grid"] = [list(g) for g in self.sweep_grid]
        return d


# --------------------------------------------------------------------------- metrics log

METRICS_COLUMNS = (
    "iteration",
    "env_steps_total",
    "episodes",
    "reward_min",
    "reward_mean",
    "reward_max",
    "critic_loss",
    "actor_objective",
    "updates",
)


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class MetricsLog:
    """Append-only CSV where each row reaches the file in a single write.

    A torn last line (from a crash mid-write) is removed on open, so readers
    only ever see complete rows.
    """

    def __init__(self, path, columns=METRICS_COLUMNS, key="env_steps_total"):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.key = key
        self.last_key = None
        if self.path.exists():
            self._repair()
            rows = self.read()
            if rows:
                self.last_key = float(rows[-1][key]) if key else None
        else:
            self._write_bytes(self._line(self.columns))

    @staticmethod
    def _line(values):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([_cell(v) for v in values])
        return buf.getvalue().encode()

    def _write_bytes(self, data):
        fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
        try:
            os.write(fd, data)
            os.fsync(fd)
        finally:
            os.close(fd)

    def _repair(self):
        data = self.path.read_bytes()
        if data and not data.endswith(b"\n"):
            keep = data[: data.rfind(b"\n") + 1]
            with open(self.path, "r+b") as fh:
                fh.truncate(len(keep))
        header = self.path.read_bytes().split(b"\n", 1)[0].decode()
        if header and tuple(header.split(",")) != self.columns:
            raise GridInvestError(f"{self.path}: unexpected columns {header!r}")
        if not header:
            self._write_bytes(self._line(self.columns))

    def append(self, row):
        values = [row[c] for c in self.columns]
        if self.key is not None:
            k = float(row[self.key])
            if self.last_key is not None and not k > self.last_key:
                raise GridInvestError(f"{self.key} must increase strictly ({k} after {self.last_key})")
            self.last_key = k
        self._write_bytes(self._line(values))

    def read(self):
        with open(self.path, newline="") as fh:
            return list(csv.DictReader(fh))

    def truncate_after(self, column, value):
        """Drop rows whose ``column`` exceeds ``value`` (used when resuming)."""
        rows = [r for r in self.read() if float(r[column]) <= value]
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(self._line(self.columns))
            for r in rows:
                fh.write(self._line([r[c] for c in self.columns]))
        os.replace(tmp, self.path)
        self.last_key = float(rows[-1][self.key]) if rows and self.key else None


# --------------------------------------------------------------------------- helpers


def _write_json(path, data):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _prepare_out(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise GridInvestError(f"output directory {out} is not writable: {err}") from None
    return out


def _scenario_text(spec):
    path = Path(spec)
    if not path.exists() and not path.suffix:
        bundled = resources.files("gridinvest") / "data" / f"{path.name}.yaml"
        if bundled.is_file():
            return bundled.read_text()
    try:
        return path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario: {err}", path=str(path)) from None


def load_run_scenario(spec, end_year=None):
    sc = load_scenario(spec)
    if end_year is not None and end_year != sc.end_year:
        sc = sc.with_horizon(end_year=end_year)
    return sc


def manifest(cfg, scenario, command, **extra):
    data = {
        "command": command,
        "config": cfg.to_dict(),
        "agent_config": cfg.agent_config().to_dict(),
        "seed": cfg.seed,
        "scenario": {
            "source": cfg.scenario,
            "sha256": scenario.sha256,
            "name": scenario.name,
            "start_year": scenario.start_year,
            "control_start_year": scenario.control_start_year,
            "end_year": scenario.end_year,
        },
        "code_version": code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    data.update(extra)
    return data


def greedy_episode(env, agent):
    total, _ = run_episode(env, lambda obs: agent.act(obs, explore=False))
    return total, list(env.records)


def random_episodes(env, n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        total, _ = run_episode(env, lambda obs: rng.uniform(-1.0, 1.0, env.act_dim))
        out.append((total, list(env.records)))
    return out


def summarize(records, scenario, total_reward, final_years=3):
    """Mean reward, final-year mix, episode CO2 and zero-emission share over the last years."""
    m = episode_metrics(records, scenario)
    ctrl = m.controlled
    gen = m.generation[ctrl]
    zero = np.array([t.emission_factor == 0 for t in scenario.technologies])
    tail = gen[-final_years:]
    history = [r for r in records if not r.controlled]
    env_co2 = records[-1].cumulative_co2 - (history[-1].cumulative_co2 if history else 0.0)
    return {
        "episode_reward": float(total_reward),
        "final_year": int(m.years[-1]),
        "final_year_mix": {t: float(x) for t, x in zip(scenario.tech_ids, m.mix[-1])},
        "zero_emission_share_final_years": float(tail[:, zero].sum() / tail.sum()),
        "episode_co2_Gt": float(env_co2),
        "cumulative_co2_Gt": float(m.cumulative_co2[-1]),
    }


# --------------------------------------------------------------------------- train


def train(cfg, resume=None, log=print):
    """Run the training loop described by ``cfg``; returns the run directory."""
    cfg = cfg.resolved()
    scenario = load_run_scenario(cfg.scenario, cfg.end_year)
    agent_cfg = cfg.agent_config()
    env = PowerInvestEnv(scenario)
    out = _prepare_out(cfg.out)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    start_iter, env_steps = 0, 0
    if resume is not None:
        agent = DDPGAgent.load(
            resume, expect_hash=DDPGAgent(env.obs_dim, env.act_dim, agent_cfg, cfg.seed).config_hash,
            obs_dim=env.obs_dim, act_dim=env.act_dim,
        )
        start_iter = int(agent.checkpoint_extra.get("iteration", 0))
        env_steps = int(agent.checkpoint_extra.get("env_steps_total", 0))
    else:
        agent = DDPGAgent(env.obs_dim, env.act_dim, agent_cfg, seed=cfg.seed)
        for stale in ("metrics.csv", "timing.csv"):
            if (out / stale).exists():
                (out / stale).unlink()

    shutil.copyfile(_resolve_scenario_file(cfg.scenario), out / "scenario.yaml")
    _write_json(out / "manifest.json", manifest(cfg, scenario, "train", resumed_from=str(resume) if resume else None))

    metrics = MetricsLog(out / "metrics.csv")
    timing = MetricsLog(out / "timing.csv", ("iteration", "wall_seconds"), key="iteration")
    if resume is not None:
        metrics.truncate_after("iteration", start_iter - 1)
        timing.truncate_after("iteration", start_iter - 1)

    for it in range(start_iter, cfg.iterations):
        t0 = time.perf_counter()
        rep = train_iteration(env, agent, it, env_steps_before=env_steps)
        env_steps = rep.env_steps_total
        metrics.append({c: getattr(rep, c) for c in METRICS_COLUMNS})
        timing.append({"iteration": it, "wall_seconds": time.perf_counter() - t0})
        log(
            f"iter {it:4d}  steps {env_steps:8d}  reward mean {rep.reward_mean:10.2f}  "
            f"min {rep.reward_min:10.2f}  max {rep.reward_max:10.2f}  critic {rep.critic_loss:.4g}"
        )
        extra = {"iteration": it + 1, "env_steps_total": env_steps, "end_year": scenario.end_year}
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            agent.save(ckpt_dir / f"iter_{it + 1:04d}.ckpt", extra=extra)

    agent.save(
        out / "final.ckpt",
        extra={"iteration": cfg.iterations, "env_steps_total": env_steps, "end_year": scenario.end_year},
    )
    total, records = greedy_episode(env, agent)
    write_trace_csv(out / "trace.csv", records, scenario)
    _write_json(out / "greedy_summary.json", summarize(records, scenario, total))
    return out


def _resolve_scenario_file(spec):
    path = Path(spec)
    if path.exists():
        return path
    bundled = resources.files("gridinvest") / "data" / f"{path.name}.yaml"
    if not path.suffix and bundled.is_file():
        return bundled
    raise ScenarioError(f"cannot find scenario {spec}", path=str(spec))


# --------------------------------------------------------------------------- evaluate


def evaluate(checkpoint, scenario_spec="uk_ie", episodes=20, seed=0, out="runs/eval", end_year=None):
    """Noise-free rollout of a checkpoint plus a paired uniform-random baseline.

    ``end_year`` defaults to the horizon the checkpoint was trained on.
    """
    agent = DDPGAgent.load(checkpoint)
    if end_year is None:
        end_year = agent.checkpoint_extra.get("end_year")
    scenario = load_run_scenario(scenario_spec, end_year)
    env = PowerInvestEnv(scenario)
    if (env.obs_dim, env.act_dim) != (agent.obs_dim, agent.act_dim):
        from .errors import IncompatibleCheckpointError

        raise IncompatibleCheckpointError(
            f"checkpoint expects obs={agent.obs_dim} act={agent.act_dim}, "
            f"scenario gives obs={env.obs_dim} act={env.act_dim}"
        )
    out = _prepare_out(out)
    total, records = greedy_episode(env, agent)
    write_trace_csv(out / "eval_trace.csv", records, scenario)
    policy = summarize(records, scenario, total)

    randoms = random_episodes(env, episodes, seed)
    rand = [summarize(rec, scenario, tot) for tot, rec in randoms]
    write_trace_csv(out / "random_trace.csv", randoms[0][1], scenario)
    baseline = {
        "episodes": episodes,
        "mean_episode_reward": float(np.mean([r["episode_reward"] for r in rand])),
        "mean_episode_co2_Gt": float(np.mean([r["episode_co2_Gt"] for r in rand])),
        "mean_zero_emission_share_final_years": float(
            np.mean([r["zero_emission_share_final_years"] for r in rand])
        ),
    }
    report = {
        "checkpoint": str(checkpoint),
        "scenario_sha256": scenario.sha256,
        "seed": seed,
        "policy": policy,
        "random": baseline,
        "co2_ratio_vs_random": policy["episode_co2_Gt"] / baseline["mean_episode_co2_Gt"],
        "reward_improvement_vs_random": (policy["episode_reward"] - baseline["mean_episode_reward"])
        / abs(baseline["mean_episode_reward"]),
    }
    _write_json(out / "evaluation.json", report)
    return report


# --------------------------------------------------------------------------- sweep


def grid_label(hidden):
    return "[" + ", ".join(str(int(h)) for h in hidden) + "]"


def _label_dir(hidden):
    return "h" + "x".join(str(int(h)) for h in hidden)


def final_mean_reward(metrics_rows, last=3):
    """Mean of the per-iteration mean reward over the last ``last`` iterations."""
    values = [float(r["reward_mean"]) for r in metrics_rows][-last:]
    return float(np.mean(values))


def _sweep_member(args):
    cfg_dict, hidden = args
    cfg = RunConfig(**cfg_dict)
    try:
        run_dir = train(cfg, log=lambda *_: None)
        rows = MetricsLog(run_dir / "metrics.csv").read()
        return {"label": grid_label(hidden), "status": "ok", "final_mean_reward": final_mean_reward(rows),
                "iterations": len(rows), "run_dir": str(run_dir), "error": ""}
    except Exception as err:  # one failing member must not abort the sweep
        return {"label": grid_label(hidden), "status": "failed", "final_mean_reward": "",
                "iterations": 0, "run_dir": str(cfg.out), "error": f"{type(err).__name__}: {err}"}


SWEEP_COLUMNS = ("label", "status", "final_mean_reward", "iterations", "run_dir", "error")


def sweep(cfg, workers=None, log=print):
    """Train every hidden-layer configuration in ``cfg.sweep_grid`` with the same seed."""
    if cfg.preset == "desk" and cfg.end_year is None:
        cfg = dataclasses.replace(cfg, preset="sweep")
    if not cfg.sweep_grid:
        raise ScenarioError("sweep grid must not be empty")
    labels = [grid_label(h) for h in cfg.sweep_grid]
    if len(set(labels)) != len(labels):
        raise ScenarioError(f"duplicate sweep grid entries: {labels}")
    out = _prepare_out(cfg.out)
    members = []
    for hidden in cfg.sweep_grid:
        agent = dict(cfg.agent, actor_hidden=list(hidden), critic_hidden=list(hidden))
        member = dataclasses.replace(cfg, agent=agent, out=str(out / _label_dir(hidden)))
        members.append((member.to_dict(), hidden))
    workers = workers or int(os.environ.get(THREADS_ENV, "1") or 1)
    if workers > 1 and len(members) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_member, members))
    else:
        results = []
        for m in members:
            log(f"sweep member {grid_label(m[1])}")
            results.append(_sweep_member(m))
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in results:
            writer.writerow({k: _cell(v) if isinstance(v, float) else v for k, v in r.items()})
    _write_json(out / "manifest.json", manifest(cfg.resolved(), load_run_scenario(cfg.scenario, cfg.resolved().end_year),
                                                "sweep", members=[r["label"] for r in results]))
    return results


# --------------------------------------------------------------------------- baseline


def baseline(scenario_spec="uk_ie", continuation="zero", out="runs/baseline", end_year=None):
    scenario = load_run_scenario(scenario_spec, end_year)
    out = _prepare_out(out)
    _, records = run_baseline(scenario, continuation)
    write_trace_csv(out / "trace.csv", records, scenario)
    shutil.copyfile(_resolve_scenario_file(scenario_spec), out / "scenario.yaml")
    _write_json(out / "manifest.json", {
        "command": "baseline",
        "continuation": continuation,
        "scenario": {"source": str(scenario_spec), "sha256": scenario.sha256, "end_year": scenario.end_year},
        "code_version": code_version(),
    })
    return out


# --------------------------------------------------------------------------- figures


def _trace_tables(rows):
    years = sorted({int(r["year"]) for r in rows})
    techs = list(dict.fromkeys(r["tech"] for r in rows))
    gen = {(y, t): 0.0 for y in years for t in techs}
    co2 = {}
    for r in rows:
        y = int(r["year"])
        gen[(y, r["tech"])] += float(r["generation_MWh"])
        co2[y] = float(r["cumulative_co2_Gt"])
    return years, techs, gen, co2


def export_figures(run_dir, svg=False):
    """Write fig_reward/fig_mix/fig_emissions/fig_demand CSVs into ``run_dir``."""
    run = Path(run_dir)
    trace = run / "trace.csv" if (run / "trace.csv").exists() else run / "eval_trace.csv"
    needed = {"scenario.yaml": run / "scenario.yaml", "trace.csv": trace}
    missing = [name for name, p in needed.items() if not p.exists()]
    if missing:
        raise GridInvestError(f"{run}: missing inputs {', '.join(missing)}")
    written = []

    metrics_path = run / "metrics.csv"
    if metrics_path.exists():
        rows = MetricsLog(metrics_path).read()
        with open(run / "fig_reward.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "env_steps_total", "reward_min", "reward_mean", "reward_max"))
            for r in rows:
                w.writerow((r["iteration"], r["env_steps_total"], r["reward_min"], r["reward_mean"], r["reward_max"]))
        written.append("fig_reward.csv")

    years, techs, gen, co2 = _trace_tables(read_trace_csv(trace))
    with open(run / "fig_mix.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("year", "tech", "share"))
        for y in years:
            total = sum(gen[(y, t)] for t in techs)
            for t in techs:
                w.writerow((y, t, repr(gen[(y, t)] / total)))
    written.append("fig_mix.csv")

    with open(run / "fig_emissions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("year", "emissions_Gt", "cumulative_co2_Gt"))
        prev = 0.0
        for y in years:
            w.writerow((y, repr(max(co2[y] - prev, 0.0)), repr(co2[y])))
            prev = co2[y]
    written.append("fig_emissions.csv")

    scenario = parse_scenario((run / "scenario.yaml").read_text(), source=str(run / "scenario.yaml"))
    with open(run / "fig_demand.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("year", "region", "quarter", "demand_MWh"))
        for i, y in enumerate(range(scenario.start_year, scenario.start_year + scenario.demand.shape[0])):
            for j, region in enumerate(scenario.regions):
                for q in range(4):
                    w.writerow((y, region, q + 1, repr(float(scenario.demand[i, j, q]))))
    written.append("fig_demand.csv")

    if svg:
        written.extend(_plot_svgs(run))
    return written


def _plot_svgs(run):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as err:
        raise GridInvestError("SVG export needs matplotlib (pip install 'artifact[plot]')") from err

    def read(name):
        with open(run / name, newline="") as fh:
            return list(csv.DictReader(fh))

    made = []
    if (run / "fig_reward.csv").exists():
        rows = read("fig_reward.csv")
        x = [int(r["env_steps_total"]) for r in rows]
        fig, ax = plt.subplots()
        for col in ("reward_min", "reward_mean", "reward_max"):
            ax.plot(x, [float(r[col]) for r in rows], label=col.split("_")[1])
        ax.set_xlabel("environment steps")
        ax.set_ylabel("episode reward")
        ax.legend()
        fig.savefig(run / "fig_reward.svg")
        plt.close(fig)
        made.append("fig_reward.svg")

    rows = read("fig_mix.csv")
    years = sorted({int(r["year"]) for r in rows})
    techs = list(dict.fromkeys(r["tech"] for r in rows))
    share = {(int(r["year"]), r["tech"]): float(r["share"]) for r in rows}
    fig, ax = plt.subplots()
    ax.stackplot(years, [[share[(y, t)] for y in years] for t in techs], labels=techs)
    ax.set_xlabel("year")
    ax.set_ylabel("share of generation")
    ax.legend(fontsize="small", loc="upper left")
    fig.savefig(run / "fig_mix.svg")
    plt.close(fig)
    made.append("fig_mix.svg")

    rows = read("fig_emissions.csv")
    fig, ax = plt.subplots()
    ax.plot([int(r["year"]) for r in rows], [float(r["emissions_Gt"]) for r in rows])
    ax.set_xlabel("year")
    ax.set_ylabel("GtCO2 per year")
    fig.savefig(run / "fig_emissions.svg")
    plt.close(fig)
    made.append("fig_emissions.svg")

    rows = read("fig_demand.csv")
    fig, ax = plt.subplots()
    for region in dict.fromkeys(r["region"] for r in rows):
        by_year = {}
        for r in rows:
            if r["region"] == region:
                by_year[int(r["year"])] = by_year.get(int(r["year"]), 0.0) + float(r["demand_MWh"])
        ax.plot(list(by_year), [v / 1e6 for v in by_year.values()], label=region)
    ax.set_xlabel("year")
    ax.set_ylabel("TWh per year")
    ax.legend()
    fig.savefig(run / "fig_demand.svg")
    plt.close(fig)
    made.append("fig_demand.svg")
    return made
