"""Scenario definition and the YAML scenario-file loader.

A scenario fixes the regions, horizon, technology table, demand series,
historical-period mode, and the constants used by the MDP wrapper (reward
weights, observation normalisation). The loader reports invariant violations
with the line number of the offending entry.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import HorizonError, ScenarioError
from .technology import TECHNOLOGIES, TechnologyParams

HISTORICAL_MODES = ("exogenous", "diffusion")
REWARD_MODES = ("per_step", "terminal")
CO2_ACCOUNTING = ("episode", "since_start")

# (lo, hi) used for min-max scaling of each observation block.
DEFAULT_NORMALIZATION = {
    "generation": (0.0, 3.0e8),
    "total_capacity": (0.0, 300.0),
    "cumulative_co2": (0.0, 5.0),
    "lcoe": (0.0, 200.0),
    "cumulative_investment": (0.0, 5.0e11),
    "new_investment": (0.0, 6.0),
    "fuel_price": (0.0, 100.0),
    "fuel_cost": (0.0, 1.0e10),
    "carbon_cost": (0.0, 5.0e9),
}


@dataclass(frozen=True)
class RewardSettings:
    mode: str = "per_step"
    co2_weight: float = 1000.0
    lcoe_divisor: float = 1000.0
    co2_accounting: str = "episode"

    def __post_init__(self):
        if self.mode not in REWARD_MODES:
            raise ScenarioError(f"reward.mode must be one of {REWARD_MODES}, got {self.mode!r}")
        if self.co2_accounting not in CO2_ACCOUNTING:
            raise ScenarioError(
                f"reward.co2_accounting must be one of {CO2_ACCOUNTING}, got {self.co2_accounting!r}"
            )
        if not (self.co2_weight > 0 and self.lcoe_divisor > 0):
            raise ScenarioError("reward weights must be > 0")


@dataclass
class Scenario:
    """Validated, array-backed scenario.

    ``demand`` has shape (n_years, n_regions, 4) covering
    ``start_year .. start_year + n_years - 1``. ``historical_capacity`` (exogenous
    mode) has shape (control_start_year - start_year, n_regions, n_tech).
    """

    regions: tuple
    technologies: tuple
    start_year: int
    control_start_year: int
    end_year: int
    demand: np.ndarray
    historical_mode: str = "exogenous"
    historical_capacity: np.ndarray | None = None
    initial_capacity: np.ndarray | None = None
    discount_rate: float = 0.05
    value_of_lost_load: float = 1000.0
    carbon_price: float | np.ndarray = 25.0
    capex_floor_fraction: float = 0.2
    diffusion_sigma: float = 20.0
    diffusion_tau: float | np.ndarray = 8.0
    diffusion_substeps: int = 12
    reward: RewardSettings = field(default_factory=RewardSettings)
    normalization: dict = field(default_factory=lambda: dict(DEFAULT_NORMALIZATION))
    name: str = "scenario"
    source_path: str | None = None
    sha256: str | None = None

    def __post_init__(self):
        self.regions = tuple(self.regions)
        self.technologies = tuple(sorted(self.technologies, key=lambda t: TECHNOLOGIES.index(t.id)))
        ids = [t.id for t in self.technologies]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate technology ids: {ids}")
        if not self.technologies:
            raise ScenarioError("at least one technology is required")
        if not self.regions or len(set(self.regions)) != len(self.regions):
            raise ScenarioError(f"regions must be non-empty and unique, got {self.regions}")
        if not self.start_year <= self.control_start_year < self.end_year:
            raise ScenarioError(
                "horizon must satisfy start_year <= control_start_year < end_year, got "
                f"{self.start_year}, {self.control_start_year}, {self.end_year}"
            )
        n_r, n_t = len(self.regions), len(self.technologies)
        self.demand = np.asarray(self.demand, dtype=float)
        if self.demand.ndim != 3 or self.demand.shape[1:] != (n_r, 4):
            raise ScenarioError(f"demand must have shape (years, {n_r}, 4), got {self.demand.shape}")
        if self.demand.shape[0] < self.end_year - self.start_year:
            raise ScenarioError(
                f"demand series covers {self.demand.shape[0]} years; "
                f"need {self.start_year}..{self.end_year - 1}"
            )
        if not np.all(np.isfinite(self.demand)) or np.any(self.demand <= 0):
            raise ScenarioError("demand must be finite and strictly positive")
        if self.historical_mode not in HISTORICAL_MODES:
            raise ScenarioError(f"historical mode must be one of {HISTORICAL_MODES}")
        n_hist = self.control_start_year - self.start_year
        if self.historical_mode == "exogenous":
            if self.historical_capacity is None:
                raise ScenarioError("exogenous historical mode needs a capacity series")
            self.historical_capacity = np.asarray(self.historical_capacity, dtype=float)
            if self.historical_capacity.shape != (n_hist, n_r, n_t) or n_hist == 0:
                raise ScenarioError(
                    f"historical capacity must have shape ({n_hist}, {n_r}, {n_t}) "
                    f"(years {self.start_year}..{self.control_start_year - 1}), "
                    f"got {self.historical_capacity.shape}"
                )
            if np.any(self.historical_capacity < 0):
                raise ScenarioError("historical capacity must be >= 0")
        else:
            if self.initial_capacity is None:
                raise ScenarioError("diffusion historical mode needs initial capacities")
            self.initial_capacity = np.asarray(self.initial_capacity, dtype=float)
            if self.initial_capacity.shape != (n_r, n_t) or np.any(self.initial_capacity < 0):
                raise ScenarioError(f"initial capacity must be a non-negative ({n_r}, {n_t}) array")
            if np.any(self.initial_capacity.sum(axis=1) <= 0):
                raise ScenarioError("every region needs some initial capacity in diffusion mode")
        if self.discount_rate < 0:
            raise ScenarioError(f"discount_rate must be >= 0, got {self.discount_rate}")
        if self.value_of_lost_load < 0:
            raise ScenarioError("value_of_lost_load must be >= 0")
        if not 0 <= self.capex_floor_fraction <= 1:
            raise ScenarioError("capex_floor_fraction must lie in [0, 1]")
        n_years = self.demand.shape[0]
        price = np.asarray(self.carbon_price, dtype=float)
        if price.ndim == 0:
            price = np.full(n_years, float(price))
        if price.shape != (n_years,) or np.any(price < 0):
            raise ScenarioError("carbon_price must be a non-negative scalar or one value per demand year")
        self.carbon_price = price
        if not self.diffusion_sigma > 0:
            raise ScenarioError(f"diffusion sigma must be > 0, got {self.diffusion_sigma}")
        tau = np.asarray(self.diffusion_tau, dtype=float)
        if tau.ndim == 0:
            tau = np.full((n_t, n_t), float(tau))
        if tau.shape != (n_t, n_t) or np.any(tau <= 0) or not np.allclose(tau, tau.T):
            raise ScenarioError("diffusion tau must be a positive scalar or symmetric positive matrix")
        self.diffusion_tau = tau
        if int(self.diffusion_substeps) < 1:
            raise ScenarioError("diffusion substeps must be >= 1")
        self.diffusion_substeps = int(self.diffusion_substeps)
        for tech in self.technologies:
            if isinstance(tech.max_build, dict):
                missing = set(self.regions) - set(tech.max_build)
                if missing:
                    raise ScenarioError(f"technology {tech.id!r}: max_build missing regions {sorted(missing)}")
        norm = dict(DEFAULT_NORMALIZATION)
        norm.update({k: tuple(float(x) for x in v) for k, v in self.normalization.items()})
        for key, (lo, hi) in norm.items():
            if key not in DEFAULT_NORMALIZATION:
                raise ScenarioError(f"unknown normalization block {key!r}")
            if not hi > lo:
                raise ScenarioError(f"normalization {key}: need hi > lo, got ({lo}, {hi})")
        self.normalization = norm

        # vectorised tech table
        techs = self.technologies
        self.tech_ids = tuple(t.id for t in techs)
        self.capex = np.array([t.capex for t in techs])
        self.lifetime = np.array([float(t.lifetime) for t in techs])
        self.capacity_factor = np.array([t.capacity_factor for t in techs])  # (T, 4)
        self.emission_factor = np.array([t.emission_factor for t in techs])
        self.fuel_cost = np.array([t.fuel_cost for t in techs])
        self.marginal_cost = np.array([t.marginal_cost for t in techs])
        self.max_build = np.array([[t.max_build_for(r) for t in techs] for r in self.regions])
        # ascending marginal cost, ties by canonical technology order (stable sort)
        self.merit_order = np.argsort(self.marginal_cost, kind="stable")

    @property
    def n_regions(self):
        return len(self.regions)

    @property
    def n_tech(self):
        return len(self.technologies)

    @property
    def n_control_steps(self):
        return self.end_year - self.control_start_year

    def year_index(self, year):
        idx = year - self.start_year
        if not 0 <= idx < self.demand.shape[0]:
            raise HorizonError(
                f"year {year} outside demand series {self.start_year}..{self.start_year + self.demand.shape[0] - 1}"
            )
        return idx

    def demand_for(self, year):
        """Quarterly demand (n_regions, 4) in MWh for ``year``."""
        return self.demand[self.year_index(year)]

    def carbon_price_for(self, year):
        return float(self.carbon_price[self.year_index(year)])

    def with_horizon(self, end_year=None, control_start_year=None):
        """Copy with a truncated or shifted control horizon."""
        changes = {}
        if end_year is not None:
            changes["end_year"] = int(end_year)
        if control_start_year is not None:
            changes["control_start_year"] = int(control_start_year)
            if self.historical_mode == "exogenous":
                n_hist = control_start_year - self.start_year
                changes["historical_capacity"] = self.historical_capacity[:n_hist]
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------- loading


_SCALARS = yaml.constructor.SafeConstructor()


def _plain(node, path, lines):
    """Convert a composed YAML node to Python data, recording line numbers by path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = _SCALARS.construct_object(key_node, deep=True)
            out[key] = _plain(value_node, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return _SCALARS.construct_object(node, deep=True)


class _Reader:
    def __init__(self, data, lines, source):
        self.data = data
        self.lines = lines
        self.source = source

    def line(self, path):
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, message):
        raise ScenarioError(message, line=self.line(path), path=self.source)

    def get(self, path, default=dataclasses.MISSING):
        node = self.data
        for key in path:
            if isinstance(node, list) and isinstance(key, int) and 0 <= key < len(node):
                node = node[key]
                continue
            if not isinstance(node, dict) or key not in node:
                if default is dataclasses.MISSING:
                    self.fail(path[:-1], f"missing required key {'.'.join(map(str, path))!r}")
                return default
            node = node[key]
        return node

    def number(self, path, default=dataclasses.MISSING):
        value = self.get(path, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(path, f"{'.'.join(map(str, path))} must be a finite number, got {value!r}")
        return float(value)

    def integer(self, path, default=dataclasses.MISSING):
        value = self.get(path, default)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"{'.'.join(map(str, path))} must be an integer, got {value!r}")
        return value

    def numbers(self, path, n=None):
        value = self.get(path)
        if not isinstance(value, list):
            self.fail(path, f"{'.'.join(map(str, path))} must be a list")
        if n is not None and len(value) != n:
            self.fail(path, f"{'.'.join(map(str, path))} needs {n} values, got {len(value)}")
        return [self.number(path + (i,)) for i in range(len(value))]

    def year_series(self, path, years):
        """Mapping year -> value (or list of values) covering every year in ``years``."""
        series = self.get(path)
        if not isinstance(series, dict):
            self.fail(path, f"{'.'.join(map(str, path))} must map year -> value")
        missing = [y for y in years if y not in series]
        if missing:
            self.fail(path, f"{'.'.join(map(str, path))} is missing years {missing}")
        return series


def _tech_from(reader, tech_id, regions):
    base = ("technologies", tech_id)
    block = reader.get(base)
    if not isinstance(block, dict):
        reader.fail(base, f"technology {tech_id!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(TechnologyParams)} - {"id", "extra"}
    for key in block:
        if key not in known:
            reader.fail(base + (key,), f"unknown technology field {key!r}")
    kwargs = {}
    for name in ("capex", "opex_fixed", "fuel_cost", "emission_factor", "lifetime"):
        kwargs[name] = reader.number(base + (name,))
    for name in ("learning_rate", "tax_rate", "variable_opex", "baseline_investment"):
        if name in block:
            kwargs[name] = reader.number(base + (name,))
    kwargs["capacity_factor"] = tuple(reader.numbers(base + ("capacity_factor",), 4))
    build = reader.get(base + ("max_build",), 0.0)
    if isinstance(build, dict):
        unknown = set(build) - set(regions)
        if unknown:
            reader.fail(base + ("max_build",), f"max_build names unknown regions {sorted(unknown)}")
        kwargs["max_build"] = {r: reader.number(base + ("max_build", r)) for r in regions}
    else:
        kwargs["max_build"] = reader.number(base + ("max_build",), 0.0)
    try:
        return TechnologyParams(id=tech_id, **kwargs)
    except ScenarioError as err:
        reader.fail(base + (getattr(err, "field", ""),), str(err))


def parse_scenario(text, source=None):
    """Build a :class:`Scenario` from YAML text."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error: {err}", line=mark.line + 1 if mark else None, path=source)
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ScenarioError("scenario must be a mapping", line=1, path=source)
    lines = {}
    data = _plain(root, (), lines)
    r = _Reader(data, lines, source)

    regions = r.get(("regions",))
    if not isinstance(regions, list) or not regions or not all(isinstance(x, str) for x in regions):
        r.fail(("regions",), "regions must be a non-empty list of ids")
    start = r.integer(("horizon", "start_year"))
    control = r.integer(("horizon", "control_start_year"))
    end = r.integer(("horizon", "end_year"))
    if not start <= control < end:
        r.fail(("horizon",), f"need start_year <= control_start_year < end_year, got {start}, {control}, {end}")

    tech_block = r.get(("technologies",))
    if not isinstance(tech_block, dict) or not tech_block:
        r.fail(("technologies",), "technologies must be a non-empty mapping")
    for tech_id in tech_block:
        if tech_id not in TECHNOLOGIES:
            r.fail(("technologies", tech_id), f"unknown technology {tech_id!r}; expected one of {TECHNOLOGIES}")
    tech_ids = [t for t in TECHNOLOGIES if t in tech_block]
    techs = [_tech_from(r, t, regions) for t in tech_ids]

    years = list(range(start, end + 1))
    demand = np.empty((len(years), len(regions), 4))
    for j, region in enumerate(regions):
        series = r.year_series(("demand", region), years)
        for i, year in enumerate(years):
            values = r.numbers(("demand", region, year), 4)
            if any(v <= 0 for v in values):
                r.fail(("demand", region, year), f"demand for {region} {year} must be strictly positive")
            demand[i, j] = values
        del series

    mode = r.get(("historical", "mode"))
    if mode not in HISTORICAL_MODES:
        r.fail(("historical", "mode"), f"historical.mode must be one of {HISTORICAL_MODES}, got {mode!r}")
    hist_capacity = initial_capacity = None
    if mode == "exogenous":
        hist_years = list(range(start, control))
        hist_capacity = np.zeros((len(hist_years), len(regions), len(tech_ids)))
        for j, region in enumerate(regions):
            for k, tech_id in enumerate(tech_ids):
                path = ("historical", "capacity", region, tech_id)
                r.year_series(path, hist_years)
                for i, year in enumerate(hist_years):
                    value = r.number(path + (year,))
                    if value < 0:
                        r.fail(path + (year,), "capacity must be >= 0")
                    hist_capacity[i, j, k] = value
    else:
        initial_capacity = np.zeros((len(regions), len(tech_ids)))
        for j, region in enumerate(regions):
            for k, tech_id in enumerate(tech_ids):
                path = ("historical", "initial_capacity", region, tech_id)
                value = r.number(path, 0.0)
                if value < 0:
                    r.fail(path, "capacity must be >= 0")
                initial_capacity[j, k] = value

    carbon = r.get(("carbon_price",), 25.0)
    if isinstance(carbon, dict):
        r.year_series(("carbon_price",), years)
        carbon = np.array([r.number(("carbon_price", y)) for y in years])
    else:
        carbon = r.number(("carbon_price",), 25.0)

    tau = r.get(("diffusion", "tau"), 8.0)
    if isinstance(tau, list):
        tau = np.array([r.numbers(("diffusion", "tau", i), len(tech_ids)) for i in range(len(tau))])
    else:
        tau = r.number(("diffusion", "tau"), 8.0)
    sigma = r.number(("diffusion", "sigma"), 20.0)
    if sigma <= 0:
        r.fail(("diffusion", "sigma"), f"diffusion.sigma must be > 0, got {sigma}")

    reward_kwargs = {}
    for key in ("mode", "co2_accounting"):
        if r.get(("reward", key), None) is not None:
            reward_kwargs[key] = r.get(("reward", key))
    for key in ("co2_weight", "lcoe_divisor"):
        if r.get(("reward", key), None) is not None:
            reward_kwargs[key] = r.number(("reward", key))

    norm = {}
    for key, value in (r.get(("normalization",), {}) or {}).items():
        if key not in DEFAULT_NORMALIZATION:
            r.fail(("normalization", key), f"unknown normalization block {key!r}")
        norm[key] = tuple(r.numbers(("normalization", key), 2))

    kwargs = dict(
        regions=tuple(regions),
        technologies=tuple(techs),
        start_year=start,
        control_start_year=control,
        end_year=end,
        demand=demand,
        historical_mode=mode,
        historical_capacity=hist_capacity,
        initial_capacity=initial_capacity,
        discount_rate=r.number(("discount_rate",), 0.05),
        value_of_lost_load=r.number(("value_of_lost_load",), 1000.0),
        carbon_price=carbon,
        capex_floor_fraction=r.number(("capex_floor_fraction",), 0.2),
        diffusion_sigma=sigma,
        diffusion_tau=tau,
        diffusion_substeps=r.integer(("diffusion", "substeps"), 12),
        normalization=norm,
        name=str(r.get(("name",), "scenario")),
        source_path=source,
        sha256=hashlib.sha256(text.encode()).hexdigest(),
    )
    try:
        kwargs["reward"] = RewardSettings(**reward_kwargs)
        return Scenario(**kwargs)
    except ScenarioError as err:
        if err.line is None:
            raise ScenarioError(str(err), line=1, path=source) from None
        raise


def load_scenario(path):
    """Load and validate a scenario file. ``path`` may be a bundled name like ``uk_ie``."""
    path = Path(path)
    if not path.exists() and not path.suffix:
        bundled = resources.files("gridinvest") / "data" / f"{path.name}.yaml"
        if bundled.is_file():
            return parse_scenario(bundled.read_text(), source=str(path.name))
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario: {err}", path=str(path)) from None
    return parse_scenario(text, source=str(path))


def default_scenario_path():
    return resources.files("gridinvest") / "data" / "uk_ie.yaml"
