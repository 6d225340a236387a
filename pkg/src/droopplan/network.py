"""Radial distribution network model.

Buses and lines follow the usual feeder convention: bus 0 is the slack
(substation) bus, every other bus is fed by exactly one line, and a line
carries the id of its ending bus.  Voltages and ampacities are kept as
squared per-unit quantities internally; CSV ingestion converts from
magnitudes and physical units.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConnectivityError, InputError, RadialityError


@dataclass(frozen=True)
class Bus:
    """Network bus. ``v_min``/``v_max`` are squared magnitudes (p.u.^2)."""

    id: int
    load_ref: Optional[str] = None
    res_ref: Optional[str] = None
    v_min: float = 0.81
    v_max: float = 1.21

    def __post_init__(self):
        if not (0.0 < self.v_min < self.v_max):
            raise InputError(
                f"bus {self.id}: need 0 < v_min < v_max, got "
                f"({self.v_min}, {self.v_max})"
            )
        if self.id == 0 and (self.load_ref or self.res_ref):
            raise InputError("slack bus 0 cannot carry a load or a source")


@dataclass(frozen=True)
class Line:
    """Line ``up -> id``; impedance in p.u., ampacity limit squared (p.u.^2)."""

    id: int
    up: int
    r: float
    x_reactance: float
    i_max: float

    def __post_init__(self):
        if self.r < 0.0 or self.r + abs(self.x_reactance) <= 0.0:
            raise InputError(f"line {self.id}: bad impedance ({self.r}, {self.x_reactance})")
        if self.i_max <= 0.0:
            raise InputError(f"line {self.id}: i_max must be positive")

    @property
    def z(self) -> complex:
        return complex(self.r, self.x_reactance)


@dataclass(frozen=True)
class Bases:
    """Per-unit system bases."""

    s_base_mva: float
    v_base_kv: float

    def __post_init__(self):
        if self.s_base_mva <= 0.0 or self.v_base_kv <= 0.0:
            raise InputError("per-unit bases must be strictly positive")

    @property
    def z_base_ohm(self) -> float:
        return self.v_base_kv**2 / self.s_base_mva

    @property
    def i_base_ka(self) -> float:
        return self.s_base_mva / (math.sqrt(3.0) * self.v_base_kv)


@dataclass(frozen=True)
class RadialNetwork:
    """Validated radial network with topology services.

    ``children`` maps a node id to the ids of the lines leaving it, and
    ``order`` lists line ids leaves-to-root, so a backward sweep can just
    walk ``order`` and a forward sweep its reverse.  Instances are frozen
    and safe to share between workers.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    v0: float
    bases: Bases
    children: dict[int, tuple[int, ...]] = field(repr=False)
    order: tuple[int, ...] = field(repr=False)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def line_ids(self) -> list[int]:
        return [l.id for l in self.lines]

    @property
    def res_buses(self) -> list[int]:
        """Buses hosting a renewable source, ascending."""
        return sorted(b.id for b in self.buses if b.res_ref)

    def bus(self, bus_id: int) -> Bus:
        return self._bus_map[bus_id]

    def line(self, line_id: int) -> Line:
        return self._line_map[line_id]

    @property
    def _bus_map(self) -> dict[int, Bus]:
        # cached lazily on the instance despite frozen dataclass
        m = self.__dict__.get("_bus_map_cache")
        if m is None:
            m = {b.id: b for b in self.buses}
            object.__setattr__(self, "_bus_map_cache", m)
        return m

    @property
    def _line_map(self) -> dict[int, Line]:
        m = self.__dict__.get("_line_map_cache")
        if m is None:
            m = {l.id: l for l in self.lines}
            object.__setattr__(self, "_line_map_cache", m)
        return m

    @property
    def slack_lines(self) -> tuple[int, ...]:
        """Ids of lines leaving the slack bus."""
        return self.children.get(0, ())


def _validate_topology(buses: list[Bus], lines: list[Line]) -> tuple[dict, tuple]:
    bus_ids = [b.id for b in buses]
    if sorted(bus_ids) != sorted(set(bus_ids)):
        raise InputError("duplicate bus ids")
    if 0 not in bus_ids:
        raise InputError("network must contain slack bus 0")
    id_set = set(bus_ids)

    seen_end: set[int] = set()
    for ln in lines:
        if ln.up not in id_set or ln.id not in id_set:
            raise InputError(f"line {ln.id}: endpoint not a known bus")
        if ln.id == 0:
            raise RadialityError("a line may not end at the slack bus")
        if ln.id in seen_end:
            raise RadialityError(f"bus {ln.id} has more than one incoming line")
        if ln.id == ln.up:
            raise RadialityError(f"line {ln.id} is a self-loop")
        seen_end.add(ln.id)

    if len(lines) != len(buses) - 1:
        # either a disconnected bus or a cycle; tell them apart below
        missing = id_set - seen_end - {0}
        if missing:
            raise ConnectivityError(f"buses {sorted(missing)} have no feeding line")
        raise RadialityError("line count inconsistent with a radial network")

    children: dict[int, list[int]] = {b: [] for b in bus_ids}
    line_by_end = {ln.id: ln for ln in lines}
    for ln in lines:
        children[ln.up].append(ln.id)
    for k in children:
        children[k].sort()

    # walk down from the slack; anything unreached is on a cycle or island
    reached = {0}
    frontier = [0]
    order_root_first: list[int] = []
    while frontier:
        node = frontier.pop()
        for lid in sorted(children[node], reverse=True):
            order_root_first.append(lid)
            reached.add(lid)
            frontier.append(lid)
    if len(reached) - 1 != len(lines):
        unreached = sorted(set(line_by_end) - reached)
        raise RadialityError(f"lines {unreached} are not reachable from the slack (cycle)")

    # leaves-to-root order: reverse of the root-first DFS emission, then
    # re-sorted deterministically by (depth descending, id ascending)
    depth: dict[int, int] = {0: 0}
    for lid in order_root_first:
        ln = line_by_end[lid]
        depth[lid] = depth[ln.up] + 1
    order = tuple(sorted(line_by_end, key=lambda i: (-depth[i], i)))
    children_t = {k: tuple(v) for k, v in children.items()}
    return children_t, order


def build_network(buses, lines, v0: float, bases: Bases) -> RadialNetwork:
    """Assemble and validate a RadialNetwork from in-memory records."""
    buses = sorted(buses, key=lambda b: b.id)
    lines = sorted(lines, key=lambda l: l.id)
    if v0 <= 0.0:
        raise InputError("squared slack voltage must be positive")
    children, order = _validate_topology(list(buses), list(lines))
    return RadialNetwork(
        buses=tuple(buses),
        lines=tuple(lines),
        v0=v0,
        bases=bases,
        children=children,
        order=order,
    )


def sweep_order(net: RadialNetwork) -> list[int]:
    """Line ids ordered leaves-to-root (reverse for root-to-leaves)."""
    return list(net.order)


def _parse_float(row: dict, key: str, ctx: str) -> float:
    try:
        return float(row[key])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{ctx}: bad or missing field '{key}'") from exc


def load_network(
    bus_path,
    line_path,
    *,
    s_base_mva: float,
    v_base_kv: float,
    slack_v_pu: float = 1.05,
) -> RadialNetwork:
    """Load a network from the bus/line CSV files.

    Bus file header: ``id,load_ref,res_ref,vmin,vmax`` with voltage limits
    as magnitudes (p.u.); line file header: ``id,up,r_ohm,x_ohm,imax_amp``
    in physical units, converted to per-unit with the given bases.
    """
    bases = Bases(s_base_mva=s_base_mva, v_base_kv=v_base_kv)
    if slack_v_pu <= 0.0:
        raise InputError("slack_v_pu must be positive")

    buses: list[Bus] = []
    with open(bus_path, newline="") as fh:
        for row in csv.DictReader(fh):
            ctx = f"bus file row {row.get('id')}"
            vmin = _parse_float(row, "vmin", ctx)
            vmax = _parse_float(row, "vmax", ctx)
            buses.append(
                Bus(
                    id=int(row["id"]),
                    load_ref=(row.get("load_ref") or None),
                    res_ref=(row.get("res_ref") or None),
                    v_min=vmin**2,
                    v_max=vmax**2,
                )
            )

    z_base = bases.z_base_ohm
    i_base_amp = bases.i_base_ka * 1e3
    lines: list[Line] = []
    with open(line_path, newline="") as fh:
        for row in csv.DictReader(fh):
            ctx = f"line file row {row.get('id')}"
            r = _parse_float(row, "r_ohm", ctx) / z_base
            x = _parse_float(row, "x_ohm", ctx) / z_base
            imax = _parse_float(row, "imax_amp", ctx) / i_base_amp
            lines.append(Line(id=int(row["id"]), up=int(row["up"]), r=r, x_reactance=x, i_max=imax**2))

    return build_network(buses, lines, v0=slack_v_pu**2, bases=bases)


def to_physical(net: RadialNetwork):
    """Round-trip helper: per-unit line data back to ohms/amps."""
    z_base = net.bases.z_base_ohm
    i_base_amp = net.bases.i_base_ka * 1e3
    out = {}
    for ln in net.lines:
        out[ln.id] = (
            ln.r * z_base,
            ln.x_reactance * z_base,
            math.sqrt(ln.i_max) * i_base_amp,
        )
    return out
