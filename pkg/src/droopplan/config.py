"""Run configuration: TOML parsing and case presets."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .builder import CostParams
from .droop import STABILIZING, InverterSpec, make_control
from .errors import InputError
from .network import RadialNetwork, load_network
from .profiles import ProfileSet, load_profiles

# case presets: (droop_model, relaxation)
CASE_PRESETS = {
    1: ("on", "maropf"),
    2: ("off", "maropf"),
    3: ("on", "cone"),
}


@dataclass
class RunConfig:
    base_dir: str
    network: dict
    profiles: dict
    scenarios: dict
    droop: dict
    costs_raw: dict
    res_units: dict[int, dict]
    solver: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict)

    def path(self, name: str) -> str:
        p = name if os.path.isabs(name) else os.path.join(self.base_dir, name)
        if not os.path.exists(p):
            raise InputError(f"referenced file does not exist: {p}")
        return p

    def load_net(self) -> RadialNetwork:
        return load_network(
            self.path(self.network["buses"]),
            self.path(self.network["lines"]),
            s_base_mva=float(self.network.get("s_base_mva", 1.0)),
            v_base_kv=float(self.network.get("v_base_kv", 12.66)),
            slack_v_pu=float(self.network.get("slack_v_pu", 1.05)),
        )

    def load_profiles(self) -> ProfileSet:
        return load_profiles(
            self.path(self.profiles["file"]),
            power_factor=float(self.profiles.get("power_factor", 0.95)),
        )

    def controls(self, net: RadialNetwork) -> dict:
        """Per-source droop bundles (linear parameters + exact curves)."""
        vn = float(self.droop.get("vn_pu", 1.0))
        v0_ref = float(self.droop.get("v0_ref_pu", 0.0)) or net.v0
        pmin_frac = float(self.droop.get("pmin_frac", 0.0))
        sign = self.droop.get("sign_convention", STABILIZING)
        out = {}
        for bus in net.res_buses:
            unit = self.res_units.get(bus)
            if unit is None:
                raise InputError(f"no [res] entry for source bus {bus}")
            p_max = float(unit["p_max"])
            s_max = float(unit.get("s_max", 1.1 * p_max))
            spec = InverterSpec(s_max=s_max, p_max=p_max, p_min=pmin_frac * p_max)
            out[bus] = make_control(vn, v0_ref, spec, sign)
        return out

    def cost_params(self, net: RadialNetwork) -> CostParams:
        raw = self.costs_raw

        def per_bus(key):
            val = raw.get(key, 0.0)
            if isinstance(val, dict):
                return {int(k): float(v) for k, v in val.items()}
            return {b: float(val) for b in net.res_buses}

        op_scale = raw.get("op_scale")
        if isinstance(op_scale, str):
            if op_scale != "horizon":
                raise InputError(f"op_scale must be a number or 'horizon', got {op_scale!r}")
            op_scale = None
        return CostParams(
            c_fix=per_bus("c_fix"),
            c_inv=per_bus("c_inv"),
            c_maint=per_bus("c_maint"),
            interest=float(raw.get("interest", 0.05)),
            n_years=int(raw.get("n_years", 5)),
            w_inv=float(raw.get("w_inv", 0.8)),
            w_op=float(raw.get("w_op", 1.0)),
            x_max=int(raw.get("x_max", 6)),
            op_scale=None if op_scale is None else float(op_scale),
        )


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise InputError(f"config file does not exist: {path}")
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    for section in ("network", "profiles"):
        if section not in data:
            raise InputError(f"config misses required [{section}] section")
    res_units = {}
    for key, entry in data.get("res", {}).items():
        if not isinstance(entry, dict) or "bus" not in entry:
            raise InputError(f"[res.{key}] needs at least a 'bus' and 'p_max'")
        res_units[int(entry["bus"])] = entry
    return RunConfig(
        base_dir=os.path.dirname(os.path.abspath(path)),
        network=data["network"],
        profiles=data["profiles"],
        scenarios=data.get("scenarios", {}),
        droop=data.get("droop", {}),
        costs_raw=data.get("costs", {}),
        res_units=res_units,
        solver=data.get("solver", {}),
        limits=data.get("limits", {}),
    )
