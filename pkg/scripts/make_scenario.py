"""Regenerate src/gridinvest/data/uk_ie.yaml.

The numbers are illustrative desk-scale defaults, not calibrated data.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "gridinvest" / "data" / "uk_ie.yaml"

START, CONTROL, END = 2007, 2017, 2050

TECHS = {
    # capex, opex_fixed, variable_opex, fuel, ef, lifetime, cf (4 quarters), lr, tax, baseline
    "coal": (1800, 40, 4, 30, 0.90, 40, [0.85] * 4, 0.01, 0.30, 1.0e12),
    "CCGT": (700, 15, 3, 45, 0.37, 30, [0.90] * 4, 0.01, 0.15, 5.0e11),
    "oil": (800, 15, 5, 90, 0.70, 30, [0.90] * 4, 0.01, 0.25, 1.0e11),
    "nuclear": (5000, 90, 2, 8, 0.0, 50, [0.85] * 4, 0.0, 0.0, 5.0e11),
    "onshore-wind": (1400, 30, 0, 0, 0.0, 25, [0.34, 0.24, 0.20, 0.32], 0.10, 0.0, 1.0e11),
    "offshore-wind": (3000, 70, 0, 0, 0.0, 25, [0.48, 0.34, 0.30, 0.45], 0.12, 0.0, 5.0e10),
    "solar-PV": (900, 12, 0, 0, 0.0, 25, [0.05, 0.16, 0.17, 0.07], 0.20, 0.0, 5.0e10),
    "wave": (5000, 150, 0, 0, 0.0, 20, [0.35, 0.20, 0.18, 0.32], 0.15, 0.0, 5.0e9),
}

MAX_BUILD = {
    "UK": {"coal": 3.0, "CCGT": 4.0, "oil": 1.0, "nuclear": 2.0, "onshore-wind": 4.0,
           "offshore-wind": 6.0, "solar-PV": 6.0, "wave": 1.0},
    "IE": {"coal": 0.5, "CCGT": 0.6, "oil": 0.2, "nuclear": 0.3, "onshore-wind": 1.0,
           "offshore-wind": 0.8, "solar-PV": 0.8, "wave": 0.3},
}

# GW in 2007 and 2016, linearly interpolated in between
HISTORY = {
    "UK": {"coal": (28.0, 14.0), "CCGT": (27.0, 31.0), "oil": (3.8, 1.0), "nuclear": (11.0, 9.0),
           "onshore-wind": (2.0, 10.5), "offshore-wind": (0.4, 5.3), "solar-PV": (0.0, 11.5),
           "wave": (0.0, 0.01)},
    "IE": {"coal": (0.85, 0.85), "CCGT": (3.6, 4.1), "oil": (0.8, 0.5), "nuclear": (0.0, 0.0),
           "onshore-wind": (0.8, 2.9), "offshore-wind": (0.025, 0.025), "solar-PV": (0.0, 0.02),
           "wave": (0.0, 0.0)},
}

# annual TWh: 2007 level, 2016 level, growth per year afterwards
DEMAND = {"UK": (350.0, 305.0, 0.022), "IE": (27.0, 28.0, 0.022)}
SEASON = {"UK": [0.29, 0.23, 0.22, 0.26], "IE": [0.28, 0.24, 0.23, 0.25]}


def annual_demand(region, year):
    first, last, growth = DEMAND[region]
    if year <= 2016:
        return first + (last - first) * (year - START) / (2016 - START)
    return last * (1.0 + growth) ** (year - 2016)


def main():
    out = []
    w = out.append
    w("# UK + Ireland two-region scenario. Illustrative, non-authoritative parameters;")
    w("# regenerate with scripts/make_scenario.py.")
    w("name: uk-ie")
    w("regions: [UK, IE]")
    w("horizon:")
    w(f"  start_year: {START}")
    w(f"  control_start_year: {CONTROL}")
    w(f"  end_year: {END}")
    w("discount_rate: 0.05")
    w("value_of_lost_load: 1000.0")
    w("carbon_price: 25.0")
    w("capex_floor_fraction: 0.2")
    w("reward:")
    w("  mode: per_step")
    w("  co2_weight: 1000.0")
    w("  lcoe_divisor: 1000.0")
    w("  co2_accounting: episode")
    w("diffusion:")
    w("  sigma: 20.0")
    w("  tau: 8.0")
    w("  substeps: 12")
    w("normalization:")
    for key, (lo, hi) in {
        "generation": (0.0, 3.0e8), "total_capacity": (0.0, 300.0), "cumulative_co2": (0.0, 5.0),
        "lcoe": (0.0, 200.0), "cumulative_investment": (0.0, 5.0e11), "new_investment": (0.0, 6.0),
        "fuel_price": (0.0, 100.0), "fuel_cost": (0.0, 1.0e10), "carbon_cost": (0.0, 5.0e9),
    }.items():
        w(f"  {key}: [{lo!r}, {hi!r}]")
    w("technologies:")
    for tech, (capex, opex, vopex, fuel, ef, life, cf, lr, tax, base) in TECHS.items():
        w(f"  {tech}:")
        w(f"    capex: {capex}")
        w(f"    opex_fixed: {opex}")
        w(f"    variable_opex: {vopex}")
        w(f"    fuel_cost: {fuel}")
        w(f"    emission_factor: {ef}")
        w(f"    lifetime: {life}")
        w(f"    capacity_factor: [{', '.join(str(c) for c in cf)}]")
        w(f"    learning_rate: {lr}")
        w(f"    tax_rate: {tax}")
        w(f"    baseline_investment: {base:.1e}")
        w(f"    max_build: {{UK: {MAX_BUILD['UK'][tech]}, IE: {MAX_BUILD['IE'][tech]}}}")
    w("demand:  # MWh per quarter")
    for region in ("UK", "IE"):
        w(f"  {region}:")
        for year in range(START, END + 1):
            total = annual_demand(region, year) * 1e6
            quarters = [round(total * s, 1) for s in SEASON[region]]
            w(f"    {year}: [{', '.join(f'{q:.1f}' for q in quarters)}]")
    w("historical:")
    w("  mode: exogenous")
    w("  capacity:  # GW installed")
    years = np.arange(START, CONTROL)
    for region in ("UK", "IE"):
        w(f"    {region}:")
        for tech, (a, b) in HISTORY[region].items():
            values = a + (b - a) * (years - START) / (CONTROL - 1 - START)
            w(f"      {tech}: {{{', '.join(f'{y}: {v:.4f}' for y, v in zip(years, values))}}}")
    w("  initial_capacity:  # used when mode is diffusion")
    for region in ("UK", "IE"):
        w(f"    {region}: {{{', '.join(f'{t}: {HISTORY[region][t][0]}' for t in TECHS)}}}")
    OUT.write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
