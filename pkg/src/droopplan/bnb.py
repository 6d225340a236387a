"""Branch-and-bound over the placement and activation binaries.

Node relaxations go through the conic interior-point solver; branching
covers placement columns before activation columns, most-fractional
first.  Until a first incumbent exists the search plunges depth-first,
afterwards it follows best bound.  A rounding heuristic (threshold the
placement columns, read activations off the relaxed voltages, solve the
fully fixed cone program) runs at the root and periodically.

``enumerate_placements`` is the matching ground-truth oracle for small
instances: it walks every placement within budget, resolves the true
linear-droop operating point per scenario with the verifier, and scores
the same objective from verified flows.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import socp
from .builder import (
    CanonicalForm,
    ConicProgram,
    CostParams,
    PlanningSolution,
    canonicalize,
    extract_solution,
)
from .errors import InfeasibleError, InputError, SolverError
from .network import RadialNetwork
from .scenarios import ScenarioSet
from .verifier import MODE_LINEAR, NoConvergenceError, solve_droop_fixed_point

INT_TOL = 1e-6
_NODE_SOLVE_TOL = 1e-7


@dataclass
class BnBNode:
    fixed: dict[int, float]
    bound: float
    depth: int
    order: int = 0

    def __lt__(self, other):
        return (self.bound, self.order) < (other.bound, other.order)


@dataclass
class Limits:
    max_nodes: int = 20000
    max_time: Optional[float] = None


def _solve_node(prog: ConicProgram, fixed, tol=_NODE_SOLVE_TOL):
    form = canonicalize(prog, fixed)
    if form.trivially_infeasible:
        return form, {"status": socp.STATUS_INFEASIBLE, "iterations": 0, "trace": []}
    raw = socp.solve_triple(
        form.c,
        form.A,
        form.b,
        form.G,
        form.h,
        socp.ConeLayout(form.cone_l, form.cone_q),
        tol=tol,
        max_iter=100,
    )
    return form, raw


def _branch_column(prog: ConicProgram, full: np.ndarray, fixed) -> Optional[int]:
    """Most fractional placement column first, then activations."""
    lay = prog.layout
    x_cols = [lay.col("x", element=b) for b in prog.meta["res_buses"]]
    x_set = set(x_cols)
    best = None
    for group in (x_cols, [cix for cix in prog.binaries if cix not in x_set]):
        for cix in group:
            if cix in fixed:
                continue
            frac = abs(full[cix] - round(full[cix]))
            if frac > INT_TOL and (best is None or frac > best[0] + 1e-12):
                best = (frac, cix)
        if best is not None:
            return best[1]
    return None


def _placement_candidates(prog: ConicProgram, full: np.ndarray):
    """Placement sets worth probing from a fractional point."""
    lay = prog.layout
    res = prog.meta["res_buses"]
    x_max = prog.meta["x_max"]
    xvals = {b: full[lay.col("x", element=b)] for b in res}
    sets = []
    for thresh in (0.5, 0.3, 0.1):
        chosen = tuple(sorted(b for b in res if xvals[b] > thresh))
        if len(chosen) <= x_max:
            sets.append(chosen)
    ranked = sorted(res, key=lambda b: (-xvals[b], b))
    sets.append(tuple(sorted(ranked[: min(x_max, len(res))])))
    out = []
    for chosen in sets:
        if chosen not in out:
            out.append(chosen)
    return out


def _derive_y(prog: ConicProgram, full: np.ndarray) -> dict[int, float]:
    """Read activation binaries off a relaxed point.

    A source is flagged active when its relaxed voltage reaches the
    activation point or when the relaxation curtails its output (the
    latter catches points where fractional activations let the voltage
    sit below the threshold while still shedding power).
    """
    lay = prog.layout
    fixed = {}
    if prog.meta["droop_model"] != "on":
        return fixed
    for s_idx in range(lay.n_scen):
        for b in prog.meta["res_buses"]:
            v = full[lay.col("v", s_idx, b)]
            pg = full[lay.col("pg", s_idx, b)]
            p_ava = prog.meta["p_ava"][s_idx][b]
            active = v >= prog.meta["v_op"][b] or pg < p_ava - 1e-6
            fixed[lay.col("y", s_idx, b)] = 1.0 if active else 0.0
    return fixed


def solve_misocp(
    prog: ConicProgram,
    gap_tol: float = 1e-4,
    limits: Limits = Limits(),
    progress=None,
) -> PlanningSolution:
    """Certified mixed-integer solve of an assembled program."""
    if not (0.0 < gap_tol <= 0.1):
        raise InputError(f"gap_tol must lie in (0, 0.1], got {gap_tol}")
    t0 = time.perf_counter()
    stats = {"nodes": 0, "solves": 0, "heuristic_hits": 0}
    lay = prog.layout
    res = prog.meta["res_buses"]
    x_cols = [lay.col("x", element=b) for b in res]

    incumbent_raw = None
    incumbent_val = np.inf
    last_infeasible_fixed: dict[int, float] = {}
    tried_patterns: set = set()

    def timed_out():
        return limits.max_time is not None and time.perf_counter() - t0 > limits.max_time

    def accept_candidate(fixed):
        """Solve with every binary fixed; adopt if it beats the incumbent."""
        nonlocal incumbent_raw, incumbent_val
        stats["solves"] += 1
        form, raw = _solve_node(prog, fixed)
        if raw["status"] != socp.STATUS_OPTIMAL:
            return False
        val = raw["obj"] + form.obj_const
        if val < incumbent_val - 1e-12:
            incumbent_val = val
            incumbent_raw = form.expand(raw["x"])
            stats["heuristic_hits"] += 1
            return True
        return False

    def try_pattern(fixed_x, full=None):
        """Two-stage probe: fix placements, re-derive activations, fix all."""
        key = tuple(sorted(fixed_x.items()))
        if key in tried_patterns:
            return
        tried_patterns.add(key)
        if prog.meta["droop_model"] != "on":
            fixed = dict(fixed_x)
            for cix in prog.binaries:
                fixed.setdefault(cix, 0.0)
            accept_candidate(fixed)
            return
        stats["solves"] += 1
        form, raw = _solve_node(prog, fixed_x)
        if raw["status"] != socp.STATUS_OPTIMAL:
            return
        stage_full = form.expand(raw["x"])
        fixed = dict(fixed_x)
        fixed.update(_derive_y(prog, stage_full))
        accept_candidate(fixed)

    def probe_placements(full):
        for chosen in _placement_candidates(prog, full):
            if timed_out():
                return
            fixed_x = {
                lay.col("x", element=b): (1.0 if b in chosen else 0.0) for b in res
            }
            try_pattern(fixed_x)

    # root relaxation
    stats["solves"] += 1
    root_form, root_raw = _solve_node(prog, {})
    if root_raw["status"] == socp.STATUS_INFEASIBLE:
        raise InfeasibleError("root relaxation infeasible", fixed={})
    if root_raw["status"] == socp.STATUS_UNBOUNDED:
        raise InputError("program is unbounded; check cost data")
    root_bound = root_raw.get("obj", -np.inf)
    root_full = root_form.expand(root_raw["x"]) if root_raw.get("x") is not None else None

    if not prog.binaries:
        sol = extract_solution(prog, root_full)
        sol.gap = root_raw.get("gap", 0.0)
        sol.stats = {**stats, "wall_time": time.perf_counter() - t0}
        return sol

    if root_full is not None:
        probe_placements(root_full)

    heap: list[BnBNode] = []
    counter = itertools.count()
    plunge: list[BnBNode] = []
    root = BnBNode(fixed={}, bound=root_bound, depth=0, order=next(counter))
    root._full = root_full  # relaxation point cached on the node
    plunge.append(root)

    def record_progress():
        if progress is None:
            return
        lb = min([n.bound for n in heap + plunge] + [incumbent_val])
        gap = (incumbent_val - lb) / max(abs(incumbent_val), 1e-10)
        progress.write(
            f"{stats['nodes']},{len(heap) + len(plunge)},{lb:.9g},"
            f"{incumbent_val:.9g},{gap:.3g}\n"
        )

    if progress is not None:
        progress.write("nodes,open,best_bound,incumbent,gap\n")

    exhausted = True
    while heap or plunge:
        if stats["nodes"] >= limits.max_nodes or timed_out():
            exhausted = False
            break
        open_bounds = [n.bound for n in heap + plunge]
        global_lb = min(open_bounds) if open_bounds else incumbent_val
        if incumbent_raw is not None:
            gap = (incumbent_val - global_lb) / max(abs(incumbent_val), 1e-10)
            if gap <= gap_tol:
                exhausted = False
                break
        node = plunge.pop() if (plunge and incumbent_raw is None) else None
        if node is None:
            if plunge:
                heap.extend(plunge)
                heapq.heapify(heap)
                plunge = []
            node = heapq.heappop(heap)
        if incumbent_raw is not None and node.bound >= incumbent_val - gap_tol * max(
            1.0, abs(incumbent_val)
        ):
            continue
        stats["nodes"] += 1
        if stats["nodes"] % 100 == 0:
            record_progress()

        full = getattr(node, "_full", None)
        if full is None:
            # node solve did not converge: branch blindly on the first
            # unfixed binary so the subtree is not lost
            col = next((cix for cix in prog.binaries if cix not in node.fixed), None)
            if col is None:
                continue
        else:
            col = _branch_column(prog, full, node.fixed)
        if col is None:
            # integral relaxation: clean it up into an incumbent
            fixed = dict(node.fixed)
            for cix in prog.binaries:
                if cix not in fixed:
                    fixed[cix] = float(round(full[cix]))
            accept_candidate(fixed)
            continue
        if full is not None and lay.family_of(col) != "x":
            # placement part settled: probe the matching activation pattern
            fixed_x = {cix: float(round(full[cix])) for cix in x_cols}
            fixed_x.update({k: v for k, v in node.fixed.items() if k in set(x_cols)})
            try_pattern(fixed_x)
            if incumbent_raw is not None:
                lb_now = min([n.bound for n in heap + plunge] + [node.bound])
                if (incumbent_val - lb_now) / max(abs(incumbent_val), 1e-10) <= gap_tol:
                    exhausted = False
                    break

        prefer = float(round(full[col])) if full is not None else 1.0
        children = []
        limit_hit = False
        for value in (prefer, 1.0 - prefer):
            child_fixed = dict(node.fixed)
            child_fixed[col] = value
            if timed_out():
                limit_hit = True
                break
            stats["solves"] += 1
            form, raw = _solve_node(prog, child_fixed)
            if raw["status"] == socp.STATUS_INFEASIBLE:
                last_infeasible_fixed = child_fixed
                continue
            if raw["status"] == socp.STATUS_UNBOUNDED:
                continue
            if raw["status"] == socp.STATUS_OPTIMAL:
                # a child bound can only tighten the parent's
                bound = max(raw["obj"] + form.obj_const, node.bound)
            else:
                bound = node.bound
            child = BnBNode(
                fixed=child_fixed, bound=bound, depth=node.depth + 1, order=next(counter)
            )
            if raw.get("x") is not None:
                child._full = form.expand(raw["x"])
            else:
                child._full = None
            children.append(child)
        if limit_hit:
            exhausted = False
            break

        children.sort(key=lambda nd: nd.bound)
        for i, child in enumerate(children):
            if incumbent_raw is None and i == 0:
                plunge.append(child)
            else:
                heapq.heappush(heap, child)

        if stats["nodes"] % 50 == 0 and full is not None:
            probe_placements(full)

    if incumbent_raw is None:
        if exhausted:
            raise InfeasibleError(
                "no feasible integer assignment exists", fixed=last_infeasible_fixed
            )
        raise SolverError(
            f"hit search limits after {stats['nodes']} nodes without an incumbent"
        )

    open_bounds = [n.bound for n in heap + plunge]
    global_lb = min(open_bounds + [incumbent_val])
    gap = max(0.0, (incumbent_val - global_lb) / max(abs(incumbent_val), 1e-10))
    record_progress()

    # exact integrality in the reported point
    for cix in prog.binaries:
        incumbent_raw[cix] = float(round(incumbent_raw[cix]))
    sol = extract_solution(prog, incumbent_raw)
    sol.gap = gap
    sol.status = "optimal" if exhausted or gap <= gap_tol else "limit"
    sol.stats = {**stats, "wall_time": time.perf_counter() - t0}
    return sol


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------


def evaluate_placement(
    net: RadialNetwork,
    scen: ScenarioSet,
    droop,
    costs: CostParams,
    placement,
) -> Optional[dict]:
    """True linear-droop objective of one placement, or None if it
    violates limits (or the fixed point diverges) in any scenario."""
    install = {b: costs.install_cost(b, droop[b].spec.s_max) for b in net.res_buses}
    norm = max(install.values()) if install else 1.0
    op_scale = costs.effective_op_scale()
    f_inv = sum(install[b] for b in placement) / norm
    f_op = 0.0
    per_scenario = []
    for s in scen.scenarios:
        try:
            op = solve_droop_fixed_point(net, s, placement, droop, mode=MODE_LINEAR)
        except NoConvergenceError:
            return None
        for lid in net.line_ids:
            bus = net.bus(lid)
            if not (bus.v_min - 1e-9 <= op.v[lid] <= bus.v_max + 1e-9):
                return None
            if op.f[lid] > net.line(lid).i_max + 1e-9:
                return None
        purchase = max(0.0, op.slack_active_flow(net))
        f_op += s.rho * s.c_grid * op_scale * purchase / norm
        per_scenario.append(op)
    return {
        "f_inv": f_inv,
        "f_op": f_op,
        "objective": costs.w_inv * f_inv + costs.w_op * f_op,
        "ops": per_scenario,
    }


def enumerate_placements(
    net: RadialNetwork,
    scen: ScenarioSet,
    droop,
    costs: CostParams,
) -> PlanningSolution:
    """Ground-truth optimum by exhausting every placement within budget."""
    res = net.res_buses
    if len(res) > 15:
        raise InputError(f"enumeration guard: {len(res)} sources exceed 15")
    best = None
    best_placement = None
    skipped = []
    n_evaluated = 0
    for size in range(0, min(costs.x_max, len(res)) + 1):
        for combo in itertools.combinations(res, size):
            n_evaluated += 1
            result = evaluate_placement(net, scen, droop, costs, combo)
            if result is None:
                skipped.append(combo)
                continue
            if best is None or result["objective"] < best["objective"] - 1e-12:
                best = result
                best_placement = combo
    if best is None:
        raise InfeasibleError("every placement within budget violates limits")
    per_scenario = {
        "v": [{l: op.v[l] for l in net.line_ids} for op in best["ops"]],
        "f": [{l: op.f[l] for l in net.line_ids} for op in best["ops"]],
        "P": [{l: op.flows[l].real for l in net.line_ids} for op in best["ops"]],
        "Q": [{l: op.flows[l].imag for l in net.line_ids} for op in best["ops"]],
        "injections": [dict(op.injections) for op in best["ops"]],
    }
    return PlanningSolution(
        placement=list(best_placement),
        objective=best["objective"],
        f_inv=best["f_inv"],
        f_op=best["f_op"],
        per_scenario=per_scenario,
        raw=np.zeros(0),
        gap=0.0,
        status="optimal",
        stats={"evaluated": n_evaluated, "infeasible": len(skipped)},
    )
