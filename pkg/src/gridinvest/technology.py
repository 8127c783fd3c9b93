"""Per-technology techno-economic constants and cost formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError, UndefinedLCOEError

TECHNOLOGIES = (
    "coal",
    "CCGT",
    "oil",
    "nuclear",
    "onshore-wind",
    "offshore-wind",
    "solar-PV",
    "wave",
)
RENEWABLES = frozenset({"onshore-wind", "offshore-wind", "solar-PV", "wave"})

HOURS_PER_QUARTER = 2190.0
HOURS_PER_YEAR = 4 * HOURS_PER_QUARTER
KW_PER_GW = 1.0e6


@dataclass(frozen=True)
class TechnologyParams:
    """Techno-economic constants for one generation technology.

    Units: capex and opex_fixed in currency/kW (per year for opex), fuel_cost and
    variable_opex in currency/MWh, emission_factor in tCO2/MWh, lifetime in
    years, max_build in GW per region per year. ``max_build`` is either a float
    applied to every region or a mapping region id -> GW.
    ``baseline_investment`` is the cumulative investment (currency) that the
    initial capex corresponds to on the experience curve.
    """

    id: str
    capex: float
    opex_fixed: float
    fuel_cost: float
    emission_factor: float
    lifetime: float
    capacity_factor: tuple = (1.0, 1.0, 1.0, 1.0)
    learning_rate: float = 0.0
    tax_rate: float = 0.0
    max_build: object = 0.0
    variable_opex: float = 0.0
    baseline_investment: float = 1.0e9
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "capacity_factor", tuple(float(c) for c in self.capacity_factor))

        def bad(name, msg):
            err = ScenarioError(f"technology {self.id!r}: {name} {msg}")
            err.field = name
            raise err

        if self.id not in TECHNOLOGIES:
            bad("id", f"must be one of {', '.join(TECHNOLOGIES)}")
        for name in ("capex", "opex_fixed", "fuel_cost", "variable_opex"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                bad(name, f"must be finite and >= 0, got {value}")
        if not self.lifetime > 0:
            bad("lifetime", f"must be > 0, got {self.lifetime}")
        if len(self.capacity_factor) != 4:
            bad("capacity_factor", "needs exactly 4 quarterly values")
        if not all(0.0 < c <= 1.0 for c in self.capacity_factor):
            bad("capacity_factor", f"values must lie in (0, 1], got {self.capacity_factor}")
        if not 0.0 <= self.learning_rate < 1.0:
            bad("learning_rate", f"must lie in [0, 1), got {self.learning_rate}")
        if not self.emission_factor >= 0:
            bad("emission_factor", f"must be >= 0, got {self.emission_factor}")
        if not self.tax_rate >= 0:
            bad("tax_rate", f"must be >= 0, got {self.tax_rate}")
        if not self.baseline_investment > 0:
            bad("baseline_investment", f"must be > 0, got {self.baseline_investment}")
        builds = self.max_build.values() if isinstance(self.max_build, dict) else [self.max_build]
        if any(not (b >= 0 and math.isfinite(b)) for b in builds):
            bad("max_build", f"must be finite and >= 0, got {self.max_build}")
        if self.id in RENEWABLES and (self.emission_factor != 0 or self.fuel_cost != 0):
            bad("emission_factor", "renewables must have zero emission factor and fuel cost")

    @property
    def marginal_cost(self):
        return self.fuel_cost + self.variable_opex

    @property
    def annual_mwh_per_kw(self):
        """Expected annual output of one kW at the mean capacity factor."""
        return float(np.mean(self.capacity_factor)) * HOURS_PER_YEAR / 1000.0

    def max_build_for(self, region):
        if isinstance(self.max_build, dict):
            return float(self.max_build[region])
        return float(self.max_build)


def annuity_factor(rate, lifetime):
    """Capital recovery factor r(1+r)^L / ((1+r)^L - 1); 1/L when r == 0."""
    if rate < 0:
        raise ValueError(f"discount rate must be >= 0, got {rate}")
    if rate == 0:
        return 1.0 / lifetime
    growth = (1.0 + rate) ** lifetime
    return rate * growth / (growth - 1.0)


def lcoe(tech, current_capex, discount_rate, with_tax=False):
    """Levelised cost of electricity (currency/MWh) for one technology.

    Annuitised capex plus fixed opex, spread over the annual output per kW,
    plus fuel cost. With tax the result is scaled by ``1 + tax_rate``.
    """
    mwh_per_kw = tech.annual_mwh_per_kw
    if mwh_per_kw <= 0:
        raise UndefinedLCOEError(f"{tech.id}: zero annual generation per kW")
    fixed = current_capex * annuity_factor(discount_rate, tech.lifetime) + tech.opex_fixed
    cost = fixed / mwh_per_kw + tech.fuel_cost
    if with_tax:
        cost *= 1.0 + tech.tax_rate
    return cost


def learning_curve_update(tech, cumulative_before, cumulative_after, floor_fraction=0.2):
    """Capex after cumulative (global) investment grows from before to after.

    Follows a one-factor experience curve anchored at
    ``tech.baseline_investment``: each doubling of cumulative investment cuts
    capex by ``learning_rate``. Never below ``floor_fraction * tech.capex`` and
    never above the initial capex.
    """
    if not cumulative_after >= cumulative_before > 0:
        raise ValueError(
            f"need after >= before > 0, got before={cumulative_before}, after={cumulative_after}"
        )
    if tech.learning_rate == 0:
        return tech.capex
    exponent = math.log2(1.0 - tech.learning_rate)
    ratio = max(cumulative_after / tech.baseline_investment, 1.0)
    return max(tech.capex * ratio**exponent, floor_fraction * tech.capex)
