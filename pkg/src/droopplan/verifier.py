"""Relaxation-free validation of a controller placement.

The optimizer works on a convexified model; this module re-solves the
operating point of every scenario with the nonlinear branch-flow
equations and the droop characteristics in the loop, then compares the
resulting voltage and current magnitudes against the network limits.
The branch-flow equalities used here are exactly the optimizer's
constraints with the cone closed: v_l = v_up - 2*Re(z* S) + |z|^2 f,
S = demand + sum(children) + z*f, and f*v_l = |S|^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .droop import ResControl, eval_exact, eval_linear
from .errors import InputError, NoConvergenceError
from .network import RadialNetwork
from .scenarios import Scenario, ScenarioSet

SWEEP_TOL = 1e-10  # squared-voltage change between sweeps
SWEEP_MAX_ITER = 500
DROOP_TOL = 1e-9  # power change between droop updates
DROOP_MAX_ITER = 200
_DAMPING_FLOOR = 0.125

MODE_EXACT = "exact"
MODE_LINEAR = "linear"


@dataclass
class OperatingPoint:
    """Converged network state, all squared quantities in p.u.^2."""

    v: dict[int, float]
    f: dict[int, float]
    flows: dict[int, complex]
    injections: dict[int, complex]

    def slack_active_flow(self, net: RadialNetwork) -> float:
        return sum(self.flows[l].real for l in net.slack_lines)

    def max_voltage_mag(self):
        bus = max(self.v, key=lambda b: self.v[b])
        return float(np.sqrt(self.v[bus])), bus

    def max_current_mag(self):
        if not self.f:
            return 0.0, None
        line = max(self.f, key=lambda l: self.f[l])
        return float(np.sqrt(self.f[line])), line


@dataclass
class AuxBounds:
    """Lossless-flow companions of an operating point.

    ``v_hat`` comes from a zero-loss network with droop evaluated on the
    bound voltage itself; ``s_under`` drops the loss term, ``s_over`` and
    ``f_bar`` add it back with the bounding current.  These are the
    quantities the augmented relaxation constrains instead of the
    physical ones.
    """

    y: dict[int, int]
    v_hat: dict[int, float]
    s_hat_flow: dict[int, complex]
    inj_hat: dict[int, complex]
    s_under: dict[int, complex]
    s_over: dict[int, complex]
    f_bar: dict[int, float]


@dataclass(frozen=True)
class Limits:
    """Magnitude limits in p.u.; None falls back to per-element data."""

    v_min: Optional[float] = None
    v_max: Optional[float] = None
    i_max: Optional[float] = None


@dataclass(frozen=True)
class Violation:
    scenario: int
    element: int
    kind: str  # "overvoltage" | "undervoltage" | "overcurrent"
    value: float
    limit: float


@dataclass
class ScenarioExtrema:
    scenario: int
    max_v: float
    argmax_bus: int
    max_i: float
    argmax_line: Optional[int]


@dataclass
class VerificationReport:
    per_scenario: list[ScenarioExtrema]
    overall_max_v: float
    overall_max_i: float
    violations: list[Violation]
    v_profile: dict[int, float] = field(default_factory=dict)
    i_profile: dict[int, float] = field(default_factory=dict)
    operating_points: list[OperatingPoint] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations


def _demand_from_scenario(scenario: Scenario) -> dict[int, complex]:
    demand = {}
    for bus, p in scenario.load_p.items():
        demand[bus] = complex(p, scenario.load_q.get(bus, 0.0))
    return demand


def sweep_power_flow(net: RadialNetwork, demand: dict[int, complex]) -> OperatingPoint:
    """Backward/forward sweep to the exact branch-flow fixed point.

    ``demand`` is the complex net consumption per bus (generation enters
    as a negative entry); missing buses consume nothing.
    """
    order = net.order
    lines = {l.id: l for l in net.lines}
    v = {b: net.v0 for b in net.bus_ids}
    f = {l: 0.0 for l in lines}
    S: dict[int, complex] = {l: 0.0 + 0.0j for l in lines}

    for it in range(SWEEP_MAX_ITER):
        # backward: accumulate flows with the present loss estimate
        for lid in order:
            ln = lines[lid]
            s = demand.get(lid, 0.0 + 0.0j)
            s += sum(S[m] for m in net.children.get(lid, ()))
            S[lid] = s + ln.z * f[lid]
        # forward: propagate squared voltages from the slack
        dv_max = 0.0
        for lid in reversed(order):
            ln = lines[lid]
            vu = v[ln.up]
            v_new = vu - 2.0 * (ln.r * S[lid].real + ln.x_reactance * S[lid].imag) + abs(ln.z) ** 2 * f[lid]
            if v_new <= 0.0:
                raise NoConvergenceError(f"voltage collapse at bus {lid}")
            dv_max = max(dv_max, abs(v_new - v[lid]))
            v[lid] = v_new
        for lid in order:
            f[lid] = abs(S[lid]) ** 2 / v[lid]
        if dv_max < SWEEP_TOL and it > 0:
            break
    else:
        raise NoConvergenceError(
            f"sweep power flow did not converge in {SWEEP_MAX_ITER} iterations"
        )
    return OperatingPoint(v=v, f=f, flows=dict(S), injections={})


def _droop_targets(v, placement, controls, scenario, mode):
    """Droop output per RES bus at the given squared voltages."""
    out = {}
    for bus, ctl in controls.items():
        p_ava = scenario.p_ava.get(bus, 0.0)
        if bus not in placement:
            out[bus] = complex(p_ava, 0.0)
            continue
        if mode == MODE_LINEAR:
            p, q = eval_linear(ctl.params, p_ava, v[bus])
        else:
            vm = np.sqrt(v[bus])
            p = eval_exact(ctl.pv_curve, p_ava, vm)
            q = eval_exact(ctl.qv_curve, p_ava, vm)
        out[bus] = complex(p, q)
    return out


def solve_droop_fixed_point(
    net: RadialNetwork,
    scenario: Scenario,
    placement,
    controls: dict[int, ResControl],
    mode: str = MODE_EXACT,
) -> OperatingPoint:
    """Power flow with droop controllers in the loop.

    Outer iteration over droop outputs with a step-halving damping
    schedule (1.0, 0.5, 0.25, floor 0.125) engaged when output updates
    start alternating in sign; inner solves are full sweeps.
    """
    placement = set(placement)
    if not placement <= set(controls):
        raise InputError("placement references a source without control data")
    unknown = placement - set(scenario.p_ava)
    if unknown:
        raise InputError(f"placement buses {sorted(unknown)} host no source in scenario")
    base_demand = _demand_from_scenario(scenario)
    inj = {bus: complex(scenario.p_ava.get(bus, 0.0), 0.0) for bus in controls}

    step = 1.0
    prev_delta: dict[int, complex] = {}
    trace = []
    op = None
    for it in range(DROOP_MAX_ITER):
        demand = dict(base_demand)
        for bus, s in inj.items():
            demand[bus] = demand.get(bus, 0.0 + 0.0j) - s
        op = sweep_power_flow(net, demand)
        targets = _droop_targets(op.v, placement, controls, scenario, mode)
        delta = {bus: targets[bus] - inj[bus] for bus in controls}
        err = max((abs(d) for d in delta.values()), default=0.0)
        trace.append(err)
        if err < DROOP_TOL:
            op.injections = dict(inj)
            return op
        if prev_delta:
            alternating = any(
                delta[b].real * prev_delta[b].real < 0.0
                or delta[b].imag * prev_delta[b].imag < 0.0
                for b in delta
                if abs(delta[b]) > DROOP_TOL
            )
            if alternating:
                step = max(step * 0.5, _DAMPING_FLOOR)
        prev_delta = delta
        inj = {bus: inj[bus] + step * delta[bus] for bus in controls}
    raise NoConvergenceError(
        f"droop fixed point did not settle in {DROOP_MAX_ITER} iterations; "
        f"tail of |delta| trace: {['%.3e' % e for e in trace[-6:]]}"
    )


def verify_limits(
    net: RadialNetwork,
    scenarios: ScenarioSet,
    placement,
    controls: dict[int, ResControl],
    limits: Limits = Limits(),
    mode: str = MODE_EXACT,
    workers: int = 1,
) -> VerificationReport:
    """Solve every scenario and collect limit violations.

    Magnitude comparisons use the per-bus / per-line data unless a
    uniform override is supplied.  Scenario solves are independent;
    ``workers > 1`` runs them on a thread pool (assembly order stays
    deterministic either way).
    """
    placement = sorted(set(placement))

    def solve_one(idx_scen):
        idx, scen = idx_scen
        try:
            return idx, solve_droop_fixed_point(net, scen, placement, controls, mode)
        except NoConvergenceError as exc:
            raise NoConvergenceError(f"scenario {idx}: {exc}") from exc

    items = list(enumerate(scenarios.scenarios))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = dict(pool.map(solve_one, items))
    else:
        solved = dict(solve_one(item) for item in items)

    per_scenario = []
    violations = []
    v_profile: dict[int, float] = {b: 0.0 for b in net.bus_ids}
    i_profile: dict[int, float] = {l: 0.0 for l in net.line_ids}
    ops = []
    for idx, _ in items:
        op = solved[idx]
        ops.append(op)
        max_v, arg_v = op.max_voltage_mag()
        max_i, arg_i = op.max_current_mag()
        per_scenario.append(
            ScenarioExtrema(scenario=idx, max_v=max_v, argmax_bus=arg_v, max_i=max_i, argmax_line=arg_i)
        )
        for b in net.bus_ids:
            vm = float(np.sqrt(op.v[b]))
            v_profile[b] = max(v_profile[b], vm)
            bus = net.bus(b)
            lo = limits.v_min if limits.v_min is not None else np.sqrt(bus.v_min)
            hi = limits.v_max if limits.v_max is not None else np.sqrt(bus.v_max)
            if vm > hi + 1e-9:
                violations.append(Violation(idx, b, "overvoltage", vm, float(hi)))
            elif vm < lo - 1e-9:
                violations.append(Violation(idx, b, "undervoltage", vm, float(lo)))
        for l in net.line_ids:
            im = float(np.sqrt(op.f[l]))
            i_profile[l] = max(i_profile[l], im)
            cap = limits.i_max if limits.i_max is not None else np.sqrt(net.line(l).i_max)
            if im > cap + 1e-9:
                violations.append(Violation(idx, l, "overcurrent", im, float(cap)))

    return VerificationReport(
        per_scenario=per_scenario,
        overall_max_v=max((e.max_v for e in per_scenario), default=np.sqrt(net.v0)),
        overall_max_i=max((e.max_i for e in per_scenario), default=0.0),
        violations=violations,
        v_profile=v_profile,
        i_profile=i_profile,
        operating_points=ops,
    )


def lossless_bounds(
    net: RadialNetwork,
    scenario: Scenario,
    placement,
    controls: dict[int, ResControl],
    op: OperatingPoint,
) -> AuxBounds:
    """Evaluate the bounding companion system at a converged point.

    The returned values satisfy the augmented constraints by
    construction: the hat system is the zero-loss droop fixed point, the
    under-flows drop the loss terms, and the over-flows carry the
    bounding current that closes its own defining inequality with
    equality.
    """
    placement = set(placement)
    lines = {l.id: l for l in net.lines}
    order = net.order
    base_demand = _demand_from_scenario(scenario)

    y = {}
    for bus in controls:
        y[bus] = 1 if op.v[bus] > controls[bus].params.v_op else 0

    # hat system: lossless network with droop driven by the bound voltage
    # itself.  With y fixed this is affine in the bound voltages, and the
    # droop gain can exceed the contraction range of plain iteration, so
    # solve the linear system directly via path-impedance matrices.
    nodes = [l.id for l in net.lines]
    pos = {b: i for i, b in enumerate(nodes)}
    n = len(nodes)
    paths: dict[int, set] = {}
    parent = {l.id: l.up for l in net.lines}
    for b in nodes:
        path = set()
        cur = b
        while cur != 0:
            path.add(cur)
            cur = parent[cur]
        paths[b] = path
    R = np.zeros((n, n))
    X = np.zeros((n, n))
    for j in nodes:
        for k in nodes:
            common = paths[j] & paths[k]
            R[pos[j], pos[k]] = sum(lines[l].r for l in common)
            X[pos[j], pos[k]] = sum(lines[l].x_reactance for l in common)

    load_p = np.array([base_demand.get(b, 0.0 + 0.0j).real for b in nodes])
    load_q = np.array([base_demand.get(b, 0.0 + 0.0j).imag for b in nodes])
    a_p = np.zeros(n)
    a_q = np.zeros(n)
    B_p = np.zeros(n)
    B_q = np.zeros(n)
    for bus, ctl in controls.items():
        prm = ctl.params
        p_ava = scenario.p_ava.get(bus, 0.0)
        i = pos[bus]
        if bus in placement:
            if y[bus] == 1:
                a_p[i] = p_ava + prm.sign * prm.alpha_p * prm.v_op
                B_p[i] = -prm.sign * prm.alpha_p
            else:
                a_p[i] = p_ava
            a_q[i] = prm.sign * prm.alpha_q * prm.v_0q
            B_q[i] = -prm.sign * prm.alpha_q
        else:
            a_p[i] = p_ava
    lhs = np.eye(n) - 2.0 * R @ np.diag(B_p) - 2.0 * X @ np.diag(B_q)
    rhs = net.v0 - 2.0 * R @ (load_p - a_p) - 2.0 * X @ (load_q - a_q)
    try:
        v_hat_vec = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"bound system is singular: {exc}") from exc
    v_hat = {0: net.v0}
    for b in nodes:
        v_hat[b] = float(v_hat_vec[pos[b]])
    inj_hat = {}
    for bus in controls:
        i = pos[bus]
        inj_hat[bus] = complex(a_p[i] + B_p[i] * v_hat[bus], a_q[i] + B_q[i] * v_hat[bus])
    s_hat: dict[int, complex] = {}
    for lid in order:
        s = base_demand.get(lid, 0.0 + 0.0j) - inj_hat.get(lid, 0.0 + 0.0j)
        s += sum(s_hat[m] for m in net.children.get(lid, ()))
        s_hat[lid] = s

    # under-flows: same injections as the physical point, no loss term
    s_under: dict[int, complex] = {}
    for lid in order:
        s = base_demand.get(lid, 0.0 + 0.0j) - op.injections.get(lid, 0.0 + 0.0j)
        s += sum(s_under[m] for m in net.children.get(lid, ()))
        s_under[lid] = s

    # over-flows: loss term carried by the bounding current f_bar, which
    # closes max{|P|^2 combos} + max{|Q|^2 combos} = f_bar * v_up
    s_over: dict[int, complex] = {}
    f_bar: dict[int, float] = {}
    for lid in order:
        ln = lines[lid]
        base = base_demand.get(lid, 0.0 + 0.0j) - op.injections.get(lid, 0.0 + 0.0j)
        base += sum(s_over[m] for m in net.children.get(lid, ()))
        v_up = op.v[ln.up]
        fb = op.f[lid]
        for _ in range(200):
            p_over = base.real + ln.r * fb
            q_over = base.imag + ln.x_reactance * fb
            num = max(s_under[lid].real ** 2, p_over**2) + max(
                s_under[lid].imag ** 2, q_over**2
            )
            fb_new = num / v_up
            if abs(fb_new - fb) < 1e-14:
                fb = fb_new
                break
            fb = fb_new
        f_bar[lid] = fb
        s_over[lid] = base + ln.z * fb

    return AuxBounds(
        y=y,
        v_hat=v_hat,
        s_hat_flow=s_hat,
        inj_hat=inj_hat,
        s_under=s_under,
        s_over=s_over,
        f_bar=f_bar,
    )
