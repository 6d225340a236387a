"""Run reports: delimited outputs plus rendered profile figures.

Every planning or verification run drops its numbers as CSV and, next to
them, the voltage/current profile plots (worst magnitude per element
across scenarios, optimizer claim vs verified value, dashed limits).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .builder import PlanningSolution
from .network import RadialNetwork
from .verifier import VerificationReport


@dataclass
class CaseReport:
    case: int
    placement: list[int]
    objective: float
    f_inv: float
    f_op: float
    max_voltage: float
    max_current: float
    wall_time: float
    feasible: bool
    gap: float
    solver_status: str

    def row(self) -> dict:
        return {
            "case": self.case,
            "placement": " ".join(str(b) for b in self.placement),
            "objective": f"{self.objective:.6f}",
            "f_inv": f"{self.f_inv:.6f}",
            "f_op": f"{self.f_op:.6f}",
            "max_voltage_pu": f"{self.max_voltage:.4f}",
            "max_current_pu": f"{self.max_current:.4f}",
            "wall_time_s": f"{self.wall_time:.2f}",
            "feasible": int(self.feasible),
            "gap": f"{self.gap:.3g}",
            "status": self.solver_status,
        }


def write_report_csv(reports: list[CaseReport], path) -> None:
    if not reports:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(reports[0].row()))
        writer.writeheader()
        for rep in reports:
            writer.writerow(rep.row())


def optimizer_profiles(net: RadialNetwork, solution: PlanningSolution):
    """Optimizer-claimed per-element maxima (magnitudes)."""
    v_claim = {}
    i_claim = {}
    per = solution.per_scenario
    if "v" in per and per["v"]:
        for lid in net.line_ids:
            v_claim[lid] = max(np.sqrt(max(s[lid], 0.0)) for s in per["v"])
            i_claim[lid] = max(np.sqrt(max(s[lid], 0.0)) for s in per["f"])
    return v_claim, i_claim


def emit_profiles(
    out_dir: str,
    net: RadialNetwork,
    verification: VerificationReport,
    solution: Optional[PlanningSolution] = None,
    prefix: str = "",
) -> list[str]:
    """Write profile CSVs and figures; returns the created paths.

    Verifier maxima always come out; optimizer claims only when a
    solution is supplied.
    """
    os.makedirs(out_dir, exist_ok=True)
    created = []

    def path(name):
        p = os.path.join(out_dir, prefix + name)
        created.append(p)
        return p

    buses = [b for b in net.bus_ids if b != 0]
    with open(path("profile_v.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "v_max_pu"])
        for b in buses:
            w.writerow([b, f"{verification.v_profile[b]:.6f}"])
    with open(path("profile_i.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "i_max_pu"])
        for l in net.line_ids:
            w.writerow([l, f"{verification.i_profile[l]:.6f}"])
    with open(path("violations.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "element", "kind", "value", "limit"])
        for vio in verification.violations:
            w.writerow([vio.scenario, vio.element, vio.kind, f"{vio.value:.6f}", f"{vio.limit:.6f}"])

    v_claim = i_claim = None
    if solution is not None:
        v_claim, i_claim = optimizer_profiles(net, solution)
        if v_claim:
            with open(path("profile_v_opt.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bus", "v_max_pu"])
                for b in buses:
                    w.writerow([b, f"{v_claim[b]:.6f}"])
            with open(path("profile_i_opt.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["line", "i_max_pu"])
                for l in net.line_ids:
                    w.writerow([l, f"{i_claim[l]:.6f}"])

    _plot_profile(
        path("profile_v.png"),
        buses,
        [verification.v_profile[b] for b in buses],
        None if not v_claim else [v_claim[b] for b in buses],
        limits=(np.sqrt(min(net.bus(b).v_min for b in buses)),
                np.sqrt(max(net.bus(b).v_max for b in buses))),
        ylabel="voltage magnitude (p.u.)",
        xlabel="bus",
    )
    _plot_profile(
        path("profile_i.png"),
        net.line_ids,
        [verification.i_profile[l] for l in net.line_ids],
        None if not i_claim else [i_claim[l] for l in net.line_ids],
        limits=(None, np.sqrt(max(net.line(l).i_max for l in net.line_ids))),
        ylabel="current magnitude (p.u.)",
        xlabel="line",
    )
    return created


def _plot_profile(path, xs, verified, claimed, limits, ylabel, xlabel):
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.plot(xs, verified, "o-", ms=3.5, lw=1.2, color="tab:blue", label="verified")
    if claimed is not None:
        ax.plot(xs, claimed, "s--", ms=3, lw=1.0, color="tab:orange", label="optimizer")
    lo, hi = limits
    if lo is not None:
        ax.axhline(lo, color="tab:red", ls="--", lw=1.0)
    if hi is not None:
        ax.axhline(hi, color="tab:red", ls="--", lw=1.0, label="limit")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
