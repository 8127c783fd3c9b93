import numpy as np
import pytest

from gridinvest.scenario import Scenario, load_scenario
from gridinvest.technology import TechnologyParams


def tech(tech_id, **kw):
    base = dict(
        capex=1000.0,
        opex_fixed=20.0,
        fuel_cost=0.0,
        emission_factor=0.0,
        lifetime=20.0,
        capacity_factor=(0.5, 0.5, 0.5, 0.5),
        max_build=5.0,
    )
    if tech_id in ("coal", "CCGT", "oil"):
        base.update(fuel_cost=30.0, emission_factor=0.5)
    base.update(kw)
    return TechnologyParams(id=tech_id, **base)


def make_scenario(techs, capacity, demand=1.0e6, regions=("UK",), start=2015, control=2017, end=2020, **kw):
    """Small scenario with constant quarterly demand and a flat exogenous capacity history.

    ``capacity`` is (R, T) GW; ``demand`` a scalar MWh per quarter or an (R, 4) array.
    """
    capacity = np.atleast_2d(np.asarray(capacity, dtype=float))
    n_years = end - start + 1
    demand = np.broadcast_to(np.asarray(demand, dtype=float), (len(regions), 4))
    kw.setdefault("historical_capacity", np.repeat(capacity[None], control - start, axis=0))
    return Scenario(
        regions=regions,
        technologies=tuple(techs),
        start_year=start,
        control_start_year=control,
        end_year=end,
        demand=np.repeat(demand[None], n_years, axis=0),
        **kw,
    )


@pytest.fixture(scope="session")
def uk_ie():
    return load_scenario("uk_ie")


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
