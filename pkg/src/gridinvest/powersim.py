"""Deterministic two-region power-system simulator.

Capacity stocks (GW) per (region, technology) are depreciated at 1/lifetime
per year and topped up by investment. Each simulated year dispatches four
quarters in merit order against exogenous demand, books emissions and
generation, and updates the system LCOE. Capex falls along a one-factor
experience curve in global cumulative investment.

Before the control year the stocks follow either an exogenous capacity series
or pairwise logistic share competition on LCOE (``diffusion_step``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ActionBoundsError, HorizonError, UndefinedLCOEError
from .technology import HOURS_PER_QUARTER, KW_PER_GW, lcoe, learning_curve_update

T_PER_GT = 1.0e9
MW_PER_GW = 1.0e3
BOUNDS_SLACK = 1e-9


@dataclass
class SystemState:
    """Mutable snapshot of the simulated system at the start of ``year``.

    ``generation_last_year``, ``shortage_last_year`` and the LCOE fields refer
    to the most recently completed year. ``cumulative_co2`` is in GtCO2 since
    the scenario start year; ``co2_at_handoff`` is its value when control began.
    """

    year: int
    capacity: np.ndarray
    cumulative_investment: np.ndarray
    current_capex: np.ndarray
    quarter: int = 0
    cumulative_co2: float = 0.0
    co2_at_handoff: float = 0.0
    generation_last_year: np.ndarray | None = None
    shortage_last_year: np.ndarray | None = None
    investment_last_year: np.ndarray | None = None
    emissions_last_year: float = 0.0
    lcoe_with_tax: float = 0.0
    lcoe_without_tax: float = 0.0

    def __post_init__(self):
        n_r, n_t = self.capacity.shape
        if self.generation_last_year is None:
            self.generation_last_year = np.zeros((n_r, n_t))
        if self.shortage_last_year is None:
            self.shortage_last_year = np.zeros(n_r)
        if self.investment_last_year is None:
            self.investment_last_year = np.zeros((n_r, n_t))

    def copy(self):
        return replace(
            self,
            capacity=self.capacity.copy(),
            cumulative_investment=self.cumulative_investment.copy(),
            current_capex=self.current_capex.copy(),
            generation_last_year=self.generation_last_year.copy(),
            shortage_last_year=self.shortage_last_year.copy(),
            investment_last_year=self.investment_last_year.copy(),
        )


@dataclass
class YearRecord:
    """Everything exported for one simulated year."""

    year: int
    controlled: bool
    capacity: np.ndarray
    investment: np.ndarray
    generation: np.ndarray
    shortage: np.ndarray
    demand: np.ndarray
    emissions_t: float
    cumulative_co2: float
    lcoe_with_tax: float
    lcoe_without_tax: float
    reward: float | None = None
    extra: dict = field(default_factory=dict)


def initial_state(scenario, capacity):
    n_r, n_t = scenario.n_regions, scenario.n_tech
    return SystemState(
        year=scenario.start_year,
        capacity=np.array(capacity, dtype=float),
        cumulative_investment=np.zeros((n_r, n_t)),
        current_capex=scenario.capex.copy(),
    )


# --------------------------------------------------------------------------- dispatch


def dispatch_energy(capacity, capacity_factor, demand, order):
    """Merit-order dispatch of one quarter.

    capacity: (..., T) GW; capacity_factor: (T,); demand: (...) MWh;
    order: technology indices by ascending marginal cost.
    Returns (generation (..., T) MWh, shortage (...) MWh).
    """
    available = capacity * MW_PER_GW * capacity_factor * HOURS_PER_QUARTER
    ordered = available[..., order]
    filled_before = np.cumsum(ordered, axis=-1) - ordered
    demand = np.asarray(demand, dtype=float)
    gen_ordered = np.clip(demand[..., None] - filled_before, 0.0, ordered)
    generation = np.empty_like(available)
    generation[..., order] = gen_ordered
    shortage = np.maximum(0.0, demand - available.sum(axis=-1))
    return generation, shortage


def dispatch_quarter(state, scenario, region, quarter):
    """Generation per technology (MWh) and shortage for one region and quarter of ``state.year``."""
    if not 0 <= quarter <= 3:
        raise HorizonError(f"quarter {quarter} outside 0..3")
    r = scenario.regions.index(region) if isinstance(region, str) else int(region)
    demand = scenario.demand_for(state.year)[r, quarter]
    gen, shortage = dispatch_energy(
        state.capacity[r], scenario.capacity_factor[:, quarter], demand, scenario.merit_order
    )
    return gen, float(shortage)


def dispatch_year(capacity, scenario, year):
    """Annual generation (R, T) and shortage (R,) summed over the four quarters."""
    demand = scenario.demand_for(year)
    generation = np.zeros_like(capacity)
    shortage = np.zeros(capacity.shape[0])
    for q in range(4):
        gen, short = dispatch_energy(capacity, scenario.capacity_factor[:, q], demand[:, q], scenario.merit_order)
        generation += gen
        shortage += short
    return generation, shortage


# --------------------------------------------------------------------------- costs


def technology_lcoes(scenario, capex, with_tax=False):
    return np.array(
        [lcoe(t, c, scenario.discount_rate, with_tax) for t, c in zip(scenario.technologies, capex)]
    )


def weighted_lcoe(generation, shortage, tech_lcoe, value_of_lost_load):
    """Generation-weighted mean LCOE with unserved energy priced at VoLL."""
    total_gen = float(np.sum(generation))
    if total_gen <= 0:
        raise UndefinedLCOEError("system LCOE undefined: zero total generation")
    used = np.sum(generation, axis=0) > 0
    cost = float(np.sum(np.sum(generation, axis=0)[used] * tech_lcoe[used]))
    cost += float(np.sum(shortage)) * value_of_lost_load
    return cost / (total_gen + float(np.sum(shortage)))


def system_lcoe(state, scenario, with_tax=False):
    """System LCOE (currency/MWh) over both regions for the last completed year."""
    return weighted_lcoe(
        state.generation_last_year,
        state.shortage_last_year,
        technology_lcoes(scenario, state.current_capex, with_tax),
        scenario.value_of_lost_load,
    )


def emissions_step(generation, emission_factor):
    """tCO2 emitted by ``generation`` (MWh, (..., T)) at per-technology factors (t/MWh)."""
    return float(np.sum(np.asarray(generation) * np.asarray(emission_factor)))


# --------------------------------------------------------------------------- investment


def updated_capex(scenario, cumulative_before, cumulative_after):
    """Capex per technology after regional cumulative investment moves before -> after."""
    capex = np.empty(scenario.n_tech)
    for i, tech in enumerate(scenario.technologies):
        before = tech.baseline_investment + float(np.sum(cumulative_before[:, i]))
        after = tech.baseline_investment + float(np.sum(cumulative_after[:, i]))
        capex[i] = learning_curve_update(tech, before, after, scenario.capex_floor_fraction)
    return capex


def _book_investment(state, scenario, invest):
    before = state.cumulative_investment
    after = before + invest * state.current_capex * KW_PER_GW
    state.cumulative_investment = after
    state.investment_last_year = invest.copy()
    state.current_capex = np.minimum(state.current_capex, updated_capex(scenario, before, after))


def apply_investment(state, invest, scenario):
    """New state after one year of retirement (1/lifetime) and investment ``invest`` (GW, (R, T)).

    Investment is priced at the capex in force before the addition; capex is
    then moved along the learning curve. Raises ActionBoundsError unless
    ``0 <= invest <= max_build`` elementwise.
    """
    invest = np.asarray(invest, dtype=float)
    if invest.shape != state.capacity.shape:
        raise ActionBoundsError(f"investment shape {invest.shape} != {state.capacity.shape}")
    if not np.all(np.isfinite(invest)) or np.any(invest < -BOUNDS_SLACK) or np.any(
        invest > scenario.max_build + BOUNDS_SLACK
    ):
        raise ActionBoundsError("investment outside [0, max_build]; clip before applying")
    invest = np.clip(invest, 0.0, scenario.max_build)
    new = state.copy()
    new.capacity = state.capacity * (1.0 - 1.0 / scenario.lifetime) + invest
    _book_investment(new, scenario, invest)
    return new


def set_capacity(state, capacity, scenario):
    """Move to an externally prescribed stock, booking the implied new build as investment."""
    capacity = np.asarray(capacity, dtype=float)
    implied = np.maximum(0.0, capacity - state.capacity * (1.0 - 1.0 / scenario.lifetime))
    new = state.copy()
    new.capacity = capacity.copy()
    _book_investment(new, scenario, implied)
    return new


def simulate_year(state, scenario, controlled=False):
    """Dispatch ``state.year`` at the current stock and advance the clock by one year.

    Returns (new_state, YearRecord).
    """
    generation, shortage = dispatch_year(state.capacity, scenario, state.year)
    emitted = emissions_step(generation, scenario.emission_factor)
    new = state.copy()
    new.generation_last_year = generation
    new.shortage_last_year = shortage
    new.emissions_last_year = emitted
    new.cumulative_co2 = state.cumulative_co2 + emitted / T_PER_GT
    new.lcoe_with_tax = system_lcoe(new, scenario, with_tax=True)
    new.lcoe_without_tax = system_lcoe(new, scenario, with_tax=False)
    new.year = state.year + 1
    new.quarter = 0
    record = YearRecord(
        year=state.year,
        controlled=controlled,
        capacity=state.capacity.copy(),
        investment=state.investment_last_year.copy(),
        generation=generation,
        shortage=shortage,
        demand=scenario.demand_for(state.year).copy(),
        emissions_t=emitted,
        cumulative_co2=new.cumulative_co2,
        lcoe_with_tax=new.lcoe_with_tax,
        lcoe_without_tax=new.lcoe_without_tax,
    )
    return new, record


# --------------------------------------------------------------------------- diffusion


def diffusion_step(shares, lcoe_by_tech, dt, sigma, tau):
    """One explicit step of pairwise logistic share competition.

    dS_i = dt * sum_j S_i S_j / tau_ij * (F_ij - F_ji) with preference
    F_ij = 1 / (1 + exp((LCOE_i - LCOE_j) / sigma)). ``shares`` is (T,) or
    (R, T); rows are renormalised onto the simplex after clipping at zero.
    """
    shares = np.asarray(shares, dtype=float)
    costs = np.asarray(lcoe_by_tech, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (costs.size, costs.size))
    gap = (costs[:, None] - costs[None, :]) / sigma
    # F_ij - F_ji = -tanh(gap_ij / 2), exactly antisymmetric
    net_pref = -np.tanh(gap / 2.0) / tau
    delta = dt * shares * (shares @ net_pref.T)
    out = np.clip(shares + delta, 0.0, None)
    return out / out.sum(axis=-1, keepdims=True)


def shares_from_capacity(capacity):
    total = capacity.sum(axis=-1, keepdims=True)
    return np.divide(capacity, total, out=np.zeros_like(capacity), where=total > 0)


def diffusion_transition(state, scenario, reference_total, reference_demand):
    """Next year's stock under share diffusion, total capacity scaled with annual demand."""
    tech_lcoe = technology_lcoes(scenario, state.current_capex, with_tax=True)
    shares = shares_from_capacity(state.capacity)
    dt = 1.0 / scenario.diffusion_substeps
    for _ in range(scenario.diffusion_substeps):
        shares = diffusion_step(shares, tech_lcoe, dt, scenario.diffusion_sigma, scenario.diffusion_tau)
    annual = scenario.demand_for(state.year).sum(axis=1)
    total = reference_total * annual / reference_demand
    return set_capacity(state, shares * total[:, None], scenario)


def historical_rollout(scenario):
    """Run the pre-control years and return (state at control_start_year, records).

    Exogenous mode replays the capacity series year by year. Diffusion mode
    starts from the initial stock and evolves shares by ``diffusion_step``
    with regional totals tracking annual demand.
    """
    records = []
    if scenario.historical_mode == "exogenous":
        state = initial_state(scenario, scenario.historical_capacity[0])
        for i in range(scenario.control_start_year - scenario.start_year):
            if i > 0:
                state = set_capacity(state, scenario.historical_capacity[i], scenario)
            state, record = simulate_year(state, scenario)
            records.append(record)
    else:
        state = initial_state(scenario, scenario.initial_capacity)
        ref_total = scenario.initial_capacity.sum(axis=1)
        ref_demand = scenario.demand_for(scenario.start_year).sum(axis=1)
        for i in range(scenario.control_start_year - scenario.start_year):
            if i > 0:
                state = diffusion_transition(state, scenario, ref_total, ref_demand)
            state, record = simulate_year(state, scenario)
            records.append(record)
    state.co2_at_handoff = state.cumulative_co2
    return state, records


def run_baseline(scenario, continuation="zero"):
    """Whole-horizon run without agent control.

    ``continuation`` is ``"zero"`` (retirement only after the control year)
    or ``"diffusion"`` (share competition continues).
    """
    if continuation not in ("zero", "diffusion"):
        raise ValueError(f"continuation must be 'zero' or 'diffusion', got {continuation!r}")
    state, records = historical_rollout(scenario)
    if scenario.historical_mode == "diffusion":
        ref_total = scenario.initial_capacity.sum(axis=1)
        ref_demand = scenario.demand_for(scenario.start_year).sum(axis=1)
    else:
        ref_total = state.capacity.sum(axis=1)
        ref_demand = scenario.demand_for(state.year - 1).sum(axis=1)
    zeros = np.zeros_like(state.capacity)
    while state.year < scenario.end_year:
        if continuation == "zero":
            state = apply_investment(state, zeros, scenario)
        else:
            state = diffusion_transition(state, scenario, ref_total, ref_demand)
        state, record = simulate_year(state, scenario, controlled=False)
        records.append(record)
    return state, records
