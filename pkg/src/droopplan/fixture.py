"""Bundled 34-bus test feeder and synthetic profile generation.

The network is the classic 12.66 kV 33-bus radial feeder (branch
impedances and nominal loads below, in ohms and kW/kvar) fed through a
substation transformer from a fixed-voltage bus 0, giving 34 buses and
33 lines.  Eleven buses host PV units; nominal loads are scaled down so
that installed PV capacity is roughly 17.6 times the peak load, which
makes reverse flow and overvoltage the designing condition.

Hourly profiles are synthesized for one non-leap year starting on a
Monday: class-shaped loads (industrial, commercial, residential, rural),
a seasonal clear-sky PV bell with seeded daily clearness, and a two-peak
price curve.  Everything is deterministic in the seed.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np

from .profiles import ProfileSet, derive_reactive

S_BASE_MVA = 1.0
V_BASE_KV = 12.66
SLACK_V_PU = 1.05
V_MIN_PU = 0.90
V_MAX_PU = 1.10
I_MAX_PU = 7.5
LOAD_SCALE = 0.15  # applied to the nominal kW column
HOURS = 8760

# bus, feeding bus, r_ohm, x_ohm, nominal p_kw, q_kvar, load class
FEEDER_BRANCHES = (
    (1, 0, 0.0500, 0.2000, 0.0, 0.0, ""),
    (2, 1, 0.0922, 0.0470, 100.0, 60.0, "industrial"),
    (3, 2, 0.4930, 0.2511, 90.0, 40.0, "residential"),
    (4, 3, 0.3660, 0.1864, 120.0, 80.0, "industrial"),
    (5, 4, 0.3811, 0.1941, 60.0, 30.0, "residential"),
    (6, 5, 0.8190, 0.7070, 60.0, 20.0, "commercial"),
    (7, 6, 0.1872, 0.6188, 200.0, 100.0, "industrial"),
    (8, 7, 0.7114, 0.2351, 200.0, 100.0, "industrial"),
    (9, 8, 1.0300, 0.7400, 60.0, 20.0, "residential"),
    (10, 9, 1.0440, 0.7400, 60.0, 20.0, "residential"),
    (11, 10, 0.1966, 0.0650, 45.0, 30.0, "residential"),
    (12, 11, 0.3744, 0.1238, 60.0, 35.0, "commercial"),
    (13, 12, 1.4680, 1.1550, 60.0, 35.0, "residential"),
    (14, 13, 0.5416, 0.7129, 120.0, 80.0, "commercial"),
    (15, 14, 0.5910, 0.5260, 60.0, 10.0, "residential"),
    (16, 15, 0.7463, 0.5450, 60.0, 20.0, "residential"),
    (17, 16, 1.2890, 1.7210, 60.0, 20.0, "rural"),
    (18, 17, 0.7320, 0.5740, 90.0, 40.0, "rural"),
    (19, 2, 0.1640, 0.1565, 90.0, 40.0, "commercial"),
    (20, 19, 1.5042, 1.3554, 90.0, 40.0, "residential"),
    (21, 20, 0.4095, 0.4784, 90.0, 40.0, "residential"),
    (22, 21, 0.7089, 0.9373, 90.0, 40.0, "rural"),
    (23, 3, 0.4512, 0.3083, 90.0, 50.0, "commercial"),
    (24, 23, 0.8980, 0.7091, 420.0, 200.0, "industrial"),
    (25, 24, 0.8960, 0.7011, 420.0, 200.0, "industrial"),
    (26, 6, 0.2030, 0.1034, 60.0, 25.0, "residential"),
    (27, 26, 0.2842, 0.1447, 60.0, 25.0, "residential"),
    (28, 27, 1.0590, 0.9337, 60.0, 20.0, "rural"),
    (29, 28, 0.8042, 0.7006, 120.0, 70.0, "rural"),
    (30, 29, 0.5075, 0.2585, 200.0, 600.0, "industrial"),
    (31, 30, 0.9744, 0.9630, 150.0, 70.0, "residential"),
    (32, 31, 0.3105, 0.3619, 210.0, 100.0, "commercial"),
    (33, 32, 0.3410, 0.5302, 60.0, 40.0, "rural"),
)

# PV capacity (p.u. on the 1 MVA base); six deep units, five near the head
PV_UNITS = {
    2: 0.77,
    3: 0.77,
    6: 0.77,
    19: 0.77,
    26: 0.77,
    15: 1.00,
    18: 1.00,
    22: 1.00,
    25: 1.00,
    31: 1.00,
    33: 1.00,
}

# hourly daily shapes per load class (fraction of the nominal peak)
_SHAPES = {
    "industrial": [0.35, 0.33, 0.32, 0.32, 0.35, 0.45, 0.70, 0.92, 1.00, 1.00,
                   0.98, 0.95, 0.90, 0.95, 0.98, 0.95, 0.85, 0.65, 0.50, 0.45,
                   0.42, 0.40, 0.38, 0.36],
    "commercial": [0.25, 0.22, 0.20, 0.20, 0.22, 0.30, 0.50, 0.75, 0.92, 1.00,
                   1.00, 0.98, 0.95, 0.96, 0.98, 0.95, 0.90, 0.85, 0.75, 0.60,
                   0.48, 0.40, 0.32, 0.28],
    "residential": [0.38, 0.33, 0.30, 0.28, 0.28, 0.34, 0.50, 0.68, 0.60, 0.52,
                    0.50, 0.52, 0.55, 0.52, 0.50, 0.55, 0.68, 0.85, 1.00, 0.98,
                    0.90, 0.78, 0.60, 0.46],
    "rural": [0.30, 0.28, 0.26, 0.26, 0.30, 0.42, 0.60, 0.65, 0.58, 0.52,
              0.50, 0.52, 0.50, 0.48, 0.50, 0.58, 0.72, 0.95, 1.00, 0.92,
              0.80, 0.62, 0.48, 0.36],
}
_WEEKEND_FACTOR = {"industrial": 0.45, "commercial": 0.55, "residential": 1.05, "rural": 1.0}
_SEASON_LOAD = [1.10, 0.95, 0.85, 1.00]  # winter, spring, summer, autumn quarters
_PV_SEASON_AMP = [0.50, 0.85, 1.00, 0.70]
_PV_SEASON_SPAN = [3.4, 4.4, 5.0, 3.9]  # daylight half-width in hours

_MONTH_STARTS = np.cumsum([0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30])


def _season_of_day(day_of_year: int) -> int:
    month = int(np.searchsorted(_MONTH_STARTS, day_of_year % 365, side="right")) - 1
    return month // 3


def generate_profiles(seed: int = 1, hours: int = HOURS, load_scale: float = LOAD_SCALE) -> ProfileSet:
    """Synthesize the hourly ProfileSet for the bundled feeder."""
    rng = np.random.default_rng(seed)
    n_days = (hours + 23) // 24
    # one clearness draw per day, smoothed; keeps PV days plausible
    clearness = np.clip(rng.beta(5.0, 1.6, size=n_days), 0.15, 1.0)
    price_wiggle = rng.normal(0.0, 0.004, size=hours)

    load_p: dict[int, np.ndarray] = {}
    for bus, _, _, _, p_kw, _, cls in FEEDER_BRANCHES:
        if p_kw <= 0.0:
            continue
        base = p_kw * load_scale / (S_BASE_MVA * 1e3)
        shape = np.array(_SHAPES[cls])
        series = np.empty(hours)
        for t in range(hours):
            day = t // 24
            season = _season_of_day(day)
            weekend = ((day % 7) >= 5)
            val = base * shape[t % 24] * _SEASON_LOAD[season]
            if weekend:
                val *= _WEEKEND_FACTOR[cls]
            series[t] = val
        load_p[bus] = series

    pv = {}
    for bus, cap in sorted(PV_UNITS.items()):
        series = np.zeros(hours)
        for t in range(hours):
            day = t // 24
            season = _season_of_day(day)
            span = _PV_SEASON_SPAN[season]
            hod = t % 24
            x = (hod - 12.5) / span
            if abs(x) < 1.0:
                bell = math.cos(0.5 * math.pi * x) ** 2
                series[t] = cap * _PV_SEASON_AMP[season] * clearness[day] * bell
        pv[bus] = series

    price = np.empty(hours)
    for t in range(hours):
        day = t // 24
        hod = t % 24
        season = _season_of_day(day)
        base = 0.065 + 0.008 * (1 if season in (0, 3) else -1) * 0.5
        bump = 0.030 * math.exp(-((hod - 8.5) ** 2) / 8.0)
        bump += 0.035 * math.exp(-((hod - 19.0) ** 2) / 6.0)
        val = base + bump + price_wiggle[t]
        if (day % 7) >= 5:
            val *= 0.85
        price[t] = max(val, 0.01)

    return ProfileSet(
        horizon_hours=hours,
        load_p=load_p,
        load_q=derive_reactive(load_p, 0.95),
        pv_available=pv,
        price=price,
        start_weekday=0,
        meta={"seed": seed, "load_scale": load_scale},
    )


def write_network_files(out_dir: str) -> tuple[str, str]:
    """Write buses.csv / lines.csv for the bundled feeder."""
    bus_path = os.path.join(out_dir, "buses.csv")
    line_path = os.path.join(out_dir, "lines.csv")
    i_base_amp = S_BASE_MVA * 1e6 / (math.sqrt(3.0) * V_BASE_KV * 1e3)
    imax_amp = I_MAX_PU * i_base_amp
    with open(bus_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "load_ref", "res_ref", "vmin", "vmax"])
        w.writerow([0, "", "", V_MIN_PU, V_MAX_PU])
        for bus, _, _, _, p_kw, _, cls in FEEDER_BRANCHES:
            res = f"pv{bus}" if bus in PV_UNITS else ""
            w.writerow([bus, cls if p_kw > 0 else "", res, V_MIN_PU, V_MAX_PU])
    with open(line_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "up", "r_ohm", "x_ohm", "imax_amp"])
        for bus, up, r, x, _, _, _ in FEEDER_BRANCHES:
            w.writerow([bus, up, f"{r:.6g}", f"{x:.6g}", f"{imax_amp:.10g}"])
    return bus_path, line_path


def write_config(out_dir: str, *, k: int = 24, seed: int = 1, stratified: bool = True,
                 x_max: int = 6, gap_tol: float = 1e-3) -> str:
    """Write the planner configuration for the generated fixture."""
    path = os.path.join(out_dir, "config.toml")
    res_lines = []
    for bus, cap in sorted(PV_UNITS.items()):
        res_lines.append(f"[res.b{bus}]\nbus = {bus}\np_max = {cap}\ns_max = {cap * 1.1:.6g}\n")
    body = f"""# planner configuration for the bundled 34-bus fixture
[network]
buses = "buses.csv"
lines = "lines.csv"
s_base_mva = {S_BASE_MVA}
v_base_kv = {V_BASE_KV}
slack_v_pu = {SLACK_V_PU}

[profiles]
file = "profiles.csv"
power_factor = 0.95

[scenarios]
k = {k}
seed = {seed}
stratified = {str(stratified).lower()}

[droop]
vn_pu = 1.0
pmin_frac = 0.0
sign_convention = "stabilizing"

[costs]
c_fix = 10.0
c_inv = 80.0
c_maint = 2.0
interest = 0.05
n_years = 5
w_inv = 0.8
w_op = 1.0
x_max = {x_max}
op_scale = 1.0

[solver]
gap_tol = {gap_tol}
max_nodes = 2000

{chr(10).join(res_lines)}"""
    with open(path, "w") as fh:
        fh.write(body)
    return path


def make_fixture(out_dir: str, seed: int = 1, hours: int = HOURS, *, k: int = 24,
                 stratified: bool = True, load_scale: float = LOAD_SCALE) -> dict:
    """Generate the complete fixture bundle into ``out_dir``."""
    from .profiles import save_profiles

    os.makedirs(out_dir, exist_ok=True)
    bus_path, line_path = write_network_files(out_dir)
    profiles = generate_profiles(seed=seed, hours=hours, load_scale=load_scale)
    prof_path = os.path.join(out_dir, "profiles.csv")
    save_profiles(profiles, prof_path)
    cfg_path = write_config(out_dir, k=k, seed=seed, stratified=stratified)
    return {
        "buses": bus_path,
        "lines": line_path,
        "profiles": prof_path,
        "config": cfg_path,
    }
