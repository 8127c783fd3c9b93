"""Episodic MDP wrapper around the power-system simulator.

One step is one simulated year: the action is decoded into per-(region,
technology) investment, applied, the four quarters are dispatched, and the
reward is computed from cumulative CO2 and the untaxed system LCOE.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EpisodeLifecycleError, UndefinedLCOEError
from .powersim import apply_investment, historical_rollout, simulate_year
from .technology import RENEWABLES


def reward(co2_e, lcoe, co2_weight=1000.0, lcoe_divisor=1000.0):
    """-(co2_weight * co2_e + lcoe / lcoe_divisor); co2_e in GtCO2, lcoe in currency/MWh."""
    return -(co2_weight * co2_e + lcoe / lcoe_divisor)


def decode_action(action, max_build):
    """Map actions in [-1, 1] to investments in [0, max_build] GW (affine, after clipping)."""
    a = np.clip(np.asarray(action, dtype=float).reshape(max_build.shape), -1.0, 1.0)
    return max_build * (a + 1.0) / 2.0


class ObservationLayout:
    """Fixed index layout of the observation vector for ``n_regions`` x ``n_tech``.

    Blocks, in order: generation last year (R*T), total capacity per region (R),
    cumulative CO2 (1), system LCOE with tax (1), without tax (1), cumulative
    investment (R*T), new investment last step (R*T), fuel price per tech (T),
    fuel cost incurred last year per tech (T), carbon cost incurred last year
    per tech (T). Per-(region, tech) blocks are region-major.
    """

    BLOCKS = (
        ("generation", "rt", "generation"),
        ("total_capacity", "r", "total_capacity"),
        ("cumulative_co2", "1", "cumulative_co2"),
        ("lcoe_with_tax", "1", "lcoe"),
        ("lcoe_without_tax", "1", "lcoe"),
        ("cumulative_investment", "rt", "cumulative_investment"),
        ("new_investment", "rt", "new_investment"),
        ("fuel_price", "t", "fuel_price"),
        ("fuel_cost", "t", "fuel_cost"),
        ("carbon_cost", "t", "carbon_cost"),
    )

    def __init__(self, n_regions, n_tech):
        sizes = {"rt": n_regions * n_tech, "r": n_regions, "t": n_tech, "1": 1}
        self.slices = {}
        self.norm_key = {}
        start = 0
        for name, kind, norm in self.BLOCKS:
            self.slices[name] = slice(start, start + sizes[kind])
            self.norm_key[name] = norm
            start += sizes[kind]
        self.size = start

    def __len__(self):
        return self.size


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class PowerInvestEnv:
    """Investment MDP over ``scenario``'s control horizon.

    ``reset`` replays the historical period and returns the first observation;
    ``step`` advances one year. The episode ends when the clock reaches
    ``scenario.end_year`` (``end_year - control_start_year`` steps).
    """

    def __init__(self, scenario):
        self.scenario = scenario
        self.layout = ObservationLayout(scenario.n_regions, scenario.n_tech)
        self.obs_dim = len(self.layout)
        self.act_dim = scenario.n_regions * scenario.n_tech
        lo = np.empty(self.obs_dim)
        hi = np.empty(self.obs_dim)
        for name, sl in self.layout.slices.items():
            lo[sl], hi[sl] = scenario.normalization[self.layout.norm_key[name]]
        self._lo, self._span = lo, hi - lo
        self.zero_emission = np.array(
            [t.emission_factor == 0 for t in scenario.technologies], dtype=bool
        )
        self.renewable = np.array([t.id in RENEWABLES for t in scenario.technologies], dtype=bool)
        self.state = None
        self.records = []
        self.done = True
        self._handoff = None

    @property
    def episode_length(self):
        return self.scenario.n_control_steps

    def reset(self, seed=None):
        """Run the historical rollout and return the first observation.

        The simulator is deterministic; ``seed`` is accepted for interface
        symmetry and ignored. The historical rollout is cached after the
        first call.
        """
        if self._handoff is None:
            self._handoff = historical_rollout(self.scenario)
        state, records = self._handoff
        self.state = state.copy()
        self.records = list(records)
        self.done = False
        return self.observe()

    def raw_observation(self, state=None):
        s = self.state if state is None else state
        sc = self.scenario
        year_for_prices = min(max(s.year - 1, sc.start_year), sc.start_year + sc.demand.shape[0] - 1)
        gen_by_tech = s.generation_last_year.sum(axis=0)
        parts = {
            "generation": s.generation_last_year.ravel(),
            "total_capacity": s.capacity.sum(axis=1),
            "cumulative_co2": [s.cumulative_co2],
            "lcoe_with_tax": [s.lcoe_with_tax],
            "lcoe_without_tax": [s.lcoe_without_tax],
            "cumulative_investment": s.cumulative_investment.ravel(),
            "new_investment": s.investment_last_year.ravel(),
            "fuel_price": sc.fuel_cost,
            "fuel_cost": gen_by_tech * sc.fuel_cost,
            "carbon_cost": gen_by_tech * sc.emission_factor * sc.carbon_price_for(year_for_prices),
        }
        out = np.empty(self.obs_dim)
        for name, sl in self.layout.slices.items():
            out[sl] = parts[name]
        return out

    def normalize(self, raw):
        return np.clip((raw - self._lo) / self._span, -0.5, 1.5)

    def observe(self):
        return self.normalize(self.raw_observation())

    def co2_e(self, state=None):
        s = self.state if state is None else state
        if self.scenario.reward.co2_accounting == "episode":
            return s.cumulative_co2 - s.co2_at_handoff
        return s.cumulative_co2

    def step(self, action):
        if self.done:
            raise EpisodeLifecycleError("episode is done; call reset()")
        sc = self.scenario
        invest = decode_action(action, sc.max_build)
        state = apply_investment(self.state, invest, sc)
        state, record = simulate_year(state, sc, controlled=True)
        self.state = state
        self.done = state.year >= sc.end_year
        co2_e = self.co2_e(state)
        settings = sc.reward
        r = reward(co2_e, state.lcoe_without_tax, settings.co2_weight, settings.lcoe_divisor)
        if settings.mode == "terminal" and not self.done:
            r = 0.0
        record.reward = r
        self.records.append(record)
        gen = record.generation.sum(axis=0)
        info = {
            "year": record.year,
            "co2_e": co2_e,
            "lcoe": state.lcoe_without_tax,
            "lcoe_with_tax": state.lcoe_with_tax,
            "mix": gen / gen.sum(),
            "zero_emission_share": float(gen[self.zero_emission].sum() / gen.sum()),
            "investment": invest,
        }
        return StepResult(self.observe(), float(r), self.done, info)

    def control_records(self):
        return [r for r in self.records if r.controlled]


# --------------------------------------------------------------------------- metrics & export


@dataclass
class EpisodeMetrics:
    """Per-year series behind the mix, emissions, demand and reward plots."""

    years: np.ndarray
    tech_ids: tuple
    regions: tuple
    mix: np.ndarray  # (Y, T) fractions of generation
    generation: np.ndarray  # (Y, T) MWh summed over regions
    emissions: np.ndarray  # (Y,) GtCO2 in that year
    cumulative_co2: np.ndarray  # (Y,) Gt since start year
    demand: np.ndarray  # (Y, R, 4) MWh
    reward: np.ndarray  # (Y,) NaN for uncontrolled years
    controlled: np.ndarray  # (Y,) bool


def episode_metrics(records, scenario=None):
    """Tabulate a trajectory of :class:`YearRecord` into :class:`EpisodeMetrics`."""
    if not records:
        raise ValueError("empty trajectory")
    generation = np.array([r.generation.sum(axis=0) for r in records])
    totals = generation.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise UndefinedLCOEError("a year with zero generation has no mix")
    cumulative = np.array([r.cumulative_co2 for r in records])
    emissions = np.array([r.emissions_t for r in records]) / 1.0e9
    return EpisodeMetrics(
        years=np.array([r.year for r in records]),
        tech_ids=scenario.tech_ids if scenario is not None else (),
        regions=scenario.regions if scenario is not None else (),
        mix=generation / totals,
        generation=generation,
        emissions=emissions,
        cumulative_co2=cumulative,
        demand=np.array([r.demand for r in records]),
        reward=np.array([np.nan if r.reward is None else r.reward for r in records]),
        controlled=np.array([r.controlled for r in records]),
    )


TRACE_COLUMNS = (
    "year",
    "tech",
    "region",
    "generation_MWh",
    "capacity_GW",
    "investment_GW",
    "cumulative_co2_Gt",
    "lcoe_with_tax",
    "lcoe_without_tax",
    "reward",
)


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def trace_rows(records, scenario):
    """Rows ordered by (year, region, technology) in scenario order."""
    for rec in records:
        for j, region in enumerate(scenario.regions):
            for k, tech in enumerate(scenario.tech_ids):
                yield (
                    rec.year,
                    tech,
                    region,
                    _fmt(rec.generation[j, k]),
                    _fmt(rec.capacity[j, k]),
                    _fmt(rec.investment[j, k]),
                    _fmt(rec.cumulative_co2),
                    _fmt(rec.lcoe_with_tax),
                    _fmt(rec.lcoe_without_tax),
                    _fmt(rec.reward),
                )


def write_trace_csv(path, records, scenario):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(trace_rows(records, scenario))


def read_trace_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
