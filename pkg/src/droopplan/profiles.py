"""Hourly load / PV / price profiles.

A ProfileSet stores one hourly series per bus-level quantity over the
planning horizon.  The CSV layout is one row per hour with columns
``load_p.<bus>``, ``load_q.<bus>`` (optional), ``pv.<bus>`` and
``price``.  When reactive series are absent they are derived from the
active ones with a constant power factor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DEFAULT_POWER_FACTOR = 0.95


@dataclass
class ProfileSet:
    horizon_hours: int
    load_p: dict[int, np.ndarray]
    load_q: dict[int, np.ndarray]
    pv_available: dict[int, np.ndarray]
    price: np.ndarray
    start_weekday: int = 0  # 0 = Monday, used by calendar stratification
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.horizon_hours
        for name, series_map in (
            ("load_p", self.load_p),
            ("load_q", self.load_q),
            ("pv_available", self.pv_available),
        ):
            for bus, arr in series_map.items():
                if len(arr) != n:
                    raise InputError(f"{name}[{bus}] length {len(arr)} != horizon {n}")
        if len(self.price) != n:
            raise InputError(f"price length {len(self.price)} != horizon {n}")
        if set(self.load_q) != set(self.load_p):
            raise InputError("load_q buses must match load_p buses")
        for bus, arr in self.pv_available.items():
            if np.any(arr < 0.0):
                raise InputError(f"pv_available[{bus}] has negative entries")
        if np.any(self.price < 0.0):
            raise InputError("price has negative entries")

    @property
    def load_buses(self) -> list[int]:
        return sorted(self.load_p)

    @property
    def res_buses(self) -> list[int]:
        return sorted(self.pv_available)


def derive_reactive(load_p: dict[int, np.ndarray], power_factor: float) -> dict[int, np.ndarray]:
    """q = p * tan(phi) from a lagging power factor."""
    if not (0.0 < power_factor <= 1.0):
        raise InputError(f"power factor must be in (0, 1], got {power_factor}")
    tan_phi = math.tan(math.acos(power_factor))
    return {bus: arr * tan_phi for bus, arr in load_p.items()}


def load_profiles(path, power_factor: float = DEFAULT_POWER_FACTOR) -> ProfileSet:
    """Read a profile CSV (one row per hour)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty profile file") from None
        rows = [row for row in reader if row]

    if not rows:
        raise InputError(f"{path}: no data rows")
    cols = {name: i for i, name in enumerate(header)}
    if "price" not in cols:
        raise InputError(f"{path}: missing 'price' column")

    data = np.array([[float(v) for v in row] for row in rows], dtype=float)

    def bus_series(prefix):
        out = {}
        for name, idx in cols.items():
            if name.startswith(prefix + "."):
                out[int(name.split(".", 1)[1])] = data[:, idx].copy()
        return out

    load_p = bus_series("load_p")
    load_q = bus_series("load_q")
    pv = bus_series("pv")
    if not load_q:
        load_q = derive_reactive(load_p, power_factor)
    return ProfileSet(
        horizon_hours=len(rows),
        load_p=load_p,
        load_q=load_q,
        pv_available=pv,
        price=data[:, cols["price"]].copy(),
    )


def save_profiles(profiles: ProfileSet, path) -> None:
    """Write a ProfileSet in the canonical CSV layout."""
    buses = profiles.load_buses
    res = profiles.res_buses
    header = (
        [f"load_p.{b}" for b in buses]
        + [f"load_q.{b}" for b in buses]
        + [f"pv.{b}" for b in res]
        + ["price"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(profiles.horizon_hours):
            row = [f"{profiles.load_p[b][t]:.10g}" for b in buses]
            row += [f"{profiles.load_q[b][t]:.10g}" for b in buses]
            row += [f"{profiles.pv_available[b][t]:.10g}" for b in res]
            row.append(f"{profiles.price[t]:.10g}")
            writer.writerow(row)
