"""Assembly of the controller-placement MISOCP.

The program minimizes weighted investment plus expected energy-purchase
cost over a reduced scenario set, subject to per-scenario branch-flow
physics.  Current equations are relaxed to rotated cones; optionally the
bounding companion system (lossless voltages/flows plus a bounding
current) is added so that voltage and ampacity limits hold conservatively
on bounds rather than on relaxed quantities.  Droop behaviour of
controlled sources enters through big-M switched linear constraints.

Column and row numbering is deterministic: family, then scenario, then
element id, so identical inputs always produce identical programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .droop import ResControl
from .errors import InputError, InternalError
from .network import RadialNetwork
from .scenarios import ScenarioSet

RELAXATION_AUGMENTED = "maropf"
RELAXATION_CONE = "cone"

# squared-voltage safety margin around the limit box used to size big-M
V_BOX_MARGIN = 0.25
M_SAFETY = 1.1

_LINE_FAMILIES = ("v", "f", "P", "Q")
_AUG_LINE_FAMILIES = ("vhat", "Phat", "Qhat", "Pun", "Qun", "Pov", "Qov", "fbar")


@dataclass(frozen=True)
class CostParams:
    """Investment/operation cost data; maps are keyed by source bus."""

    c_fix: dict[int, float]
    c_inv: dict[int, float]
    c_maint: dict[int, float]
    interest: float
    n_years: int
    w_inv: float = 0.8
    w_op: float = 1.0
    x_max: int = 6
    op_scale: Optional[float] = None  # None -> discounted horizon hours

    def __post_init__(self):
        if self.interest <= 0.0:
            raise InputError("interest rate must be positive")
        if self.n_years < 1:
            raise InputError("horizon must be at least one year")
        if self.x_max < 0 or self.w_inv < 0.0 or self.w_op < 0.0:
            raise InputError("budget and weights must be nonnegative")

    @property
    def discount_sum(self) -> float:
        """sum over years of (1+interest)^(1-n)."""
        q = 1.0 / (1.0 + self.interest)
        return sum(q ** (n - 1) for n in range(1, self.n_years + 1))

    def effective_op_scale(self) -> float:
        if self.op_scale is not None:
            return self.op_scale
        return 8760.0 * self.discount_sum

    def install_cost(self, bus: int, s_max: float) -> float:
        """Full per-controller cost: capital plus discounted maintenance."""
        return (
            self.c_fix.get(bus, 0.0)
            + self.c_inv.get(bus, 0.0) * s_max
            + self.c_maint.get(bus, 0.0) * self.discount_sum
        )


@dataclass
class VariableLayout:
    """Column ranges per variable family.

    Families indexed per (scenario, element) are scenario-major; ``col``
    resolves a single column index.
    """

    ranges: dict[str, tuple[int, int]]
    line_pos: dict[int, int]
    res_pos: dict[int, int]
    n_scen: int
    n_vars: int

    def col(self, family: str, scen: int = 0, element: Optional[int] = None) -> int:
        start, stop = self.ranges[family]
        if family == "x":
            return start + self.res_pos[element]
        if family == "Ppur" or family == "vroot":
            return start + scen
        per = (stop - start) // self.n_scen if self.n_scen else 0
        if family in ("y", "pg", "qg", "pghat", "qghat"):
            return start + scen * per + self.res_pos[element]
        return start + scen * per + self.line_pos[element]

    def family_of(self, col: int) -> str:
        for fam, (start, stop) in self.ranges.items():
            if start <= col < stop:
                return fam
        raise InternalError(f"column {col} outside layout")


@dataclass
class ConicProgram:
    """Solver-independent mixed-integer second-order-cone program."""

    n_vars: int
    objective: np.ndarray
    eq: sp.csr_matrix
    eq_rhs: np.ndarray
    ineq: sp.csr_matrix
    ineq_rhs: np.ndarray
    soc_blocks: list[tuple[int, int, tuple[int, ...]]]
    binaries: list[int]
    big_m: dict[str, float]
    layout: VariableLayout
    meta: dict
    tiebreak: np.ndarray

    def solver_cost(self) -> np.ndarray:
        return self.objective + self.tiebreak


@dataclass
class PlanningSolution:
    """Chosen placement with objective breakdown and named values."""

    placement: list[int]
    objective: float
    f_inv: float
    f_op: float
    per_scenario: dict
    raw: np.ndarray
    gap: float = 0.0
    status: str = "optimal"
    stats: dict = field(default_factory=dict)


class _Assembler:
    def __init__(self, n_vars: int):
        self.n = n_vars
        self.eq_rows: list[list[tuple[int, float]]] = []
        self.eq_rhs: list[float] = []
        self.ineq_rows: list[list[tuple[int, float]]] = []
        self.ineq_rhs: list[float] = []

    def eq(self, coefs, rhs):
        self.eq_rows.append(list(coefs))
        self.eq_rhs.append(float(rhs))

    def le(self, coefs, rhs):
        self.ineq_rows.append(list(coefs))
        self.ineq_rhs.append(float(rhs))

    def matrices(self):
        def build(rows):
            r, c, v = [], [], []
            for i, row in enumerate(rows):
                for col, val in row:
                    r.append(i)
                    c.append(col)
                    v.append(val)
            return sp.coo_matrix((v, (r, c)), shape=(len(rows), self.n)).tocsr()

        return (
            build(self.eq_rows),
            np.array(self.eq_rhs),
            build(self.ineq_rows),
            np.array(self.ineq_rhs),
        )


def _build_layout(net, scen, droop_on, augmented) -> VariableLayout:
    res = net.res_buses
    lines = net.line_ids
    nG, nL, nS = len(res), len(lines), len(scen)
    fams: list[tuple[str, int]] = [("x", nG)]
    if droop_on:
        fams.append(("y", nS * nG))
    for fam in _LINE_FAMILIES:
        fams.append((fam, nS * nL))
    fams += [("pg", nS * nG), ("qg", nS * nG), ("Ppur", nS)]
    if augmented:
        for fam in ("vhat", "Phat", "Qhat"):
            fams.append((fam, nS * nL))
        if droop_on:
            fams += [("pghat", nS * nG), ("qghat", nS * nG)]
        for fam in ("Pun", "Qun", "Pov", "Qov", "fbar"):
            fams.append((fam, nS * nL))
        fams.append(("vroot", nS))
    ranges = {}
    off = 0
    for fam, size in fams:
        ranges[fam] = (off, off + size)
        off += size
    return VariableLayout(
        ranges=ranges,
        line_pos={lid: i for i, lid in enumerate(lines)},
        res_pos={b: i for i, b in enumerate(res)},
        n_scen=nS,
        n_vars=off,
    )


def compute_big_m(
    group: str,
    net: RadialNetwork,
    scen: ScenarioSet,
    droop: dict[int, ResControl],
) -> float:
    """Smallest M deactivating the relaxed branch over the variable boxes.

    Boxes: squared voltage within [v_min - 0.25, v_max + 0.25] (global
    over buses), active output in [0, p_max], reactive in +-s_max; a 1.1
    safety factor is applied.  The bound-system families reuse the plain
    ones (identical boxes).
    """
    alias = {
        "(10.a)": "(7.a)",
        "(10.b)": "(7.b)",
        "(10.q.a)": "(8.a)",
        "(10.q.b)": "(8.b)",
        "(hat-patch)": "(patch)",
    }
    group = alias.get(group, group)
    if not droop:
        raise InternalError("big-M requested without any controllable source")
    v_lo = min(b.v_min for b in net.buses) - V_BOX_MARGIN
    v_hi = max(b.v_max for b in net.buses) + V_BOX_MARGIN
    vals = []
    for bus, ctl in droop.items():
        prm, spec = ctl.params, ctl.spec
        v_span_op = max(prm.v_op - v_lo, v_hi - prm.v_op)
        v_span_0q = max(prm.v_0q - v_lo, v_hi - prm.v_0q)
        if group == "(6)":
            vals.append(v_span_op)
        elif group == "(7.a)" or group == "(patch)":
            vals.append(spec.p_max)
        elif group == "(7.b)":
            vals.append(spec.p_max + prm.alpha_p * v_span_op)
        elif group == "(8.a)":
            vals.append(spec.s_max)
        elif group == "(8.b)":
            vals.append(spec.s_max + prm.alpha_q * v_span_0q)
        else:
            raise InternalError(f"unknown big-M family {group!r}")
    return M_SAFETY * max(vals)


def build_program(
    net: RadialNetwork,
    scen: ScenarioSet,
    droop: dict[int, ResControl],
    costs: CostParams,
    droop_model: str = "on",
    relaxation: str = RELAXATION_AUGMENTED,
    tiebreak_eps: float = 1e-3,
) -> ConicProgram:
    """Assemble the placement program for the given options.

    ``droop_model="off"`` drops the droop characteristic (controlled
    sources become freely dispatchable within capacity); ``relaxation=
    "cone"`` drops the bounding companion system and applies limits to
    the relaxed quantities directly.
    """
    if droop_model not in ("on", "off"):
        raise InputError(f"droop_model must be 'on' or 'off', got {droop_model!r}")
    if relaxation not in (RELAXATION_AUGMENTED, RELAXATION_CONE):
        raise InputError(f"unknown relaxation {relaxation!r}")
    res = net.res_buses
    missing = [b for b in res if b not in droop]
    if missing:
        raise InputError(f"sources without droop data: {missing}")
    for s_idx, s in enumerate(scen.scenarios):
        unknown = set(s.p_ava) - set(res)
        if unknown:
            raise InputError(f"scenario {s_idx} references non-source buses {sorted(unknown)}")
        unknown_l = set(s.load_p) - set(net.bus_ids)
        if unknown_l:
            raise InputError(f"scenario {s_idx} references unknown buses {sorted(unknown_l)}")

    droop_on = droop_model == "on"
    augmented = relaxation == RELAXATION_AUGMENTED
    lay = _build_layout(net, scen, droop_on, augmented)
    asm = _Assembler(lay.n_vars)
    soc: list[tuple[int, int, tuple[int, ...]]] = []
    lines = {l.id: l for l in net.lines}
    nS = len(scen)

    big_m: dict[str, float] = {}
    if droop_on and res:
        for fam in ("(6)", "(7.a)", "(7.b)", "(8.a)", "(8.b)", "(patch)"):
            big_m[fam] = compute_big_m(fam, net, scen, droop)
        if augmented:
            for fam in ("(10.a)", "(10.b)", "(10.q.a)", "(10.q.b)", "(hat-patch)"):
                big_m[fam] = compute_big_m(fam, net, scen, droop)

    # objective: normalized so one controller costs about one unit
    install = {b: costs.install_cost(b, droop[b].spec.s_max) for b in res}
    norm = max(install.values()) if install else 1.0
    if norm <= 0.0:
        norm = 1.0
    op_scale = costs.effective_op_scale()
    c = np.zeros(lay.n_vars)
    tiebreak = np.zeros(lay.n_vars)
    for b in res:
        c[lay.col("x", element=b)] = costs.w_inv * install[b] / norm
    prices = [s.c_grid for s in scen.scenarios]
    mean_price = float(np.mean(prices)) if prices else 0.0
    for s_idx, s in enumerate(scen.scenarios):
        c[lay.col("Ppur", s_idx)] = costs.w_op * s.rho * s.c_grid * op_scale / norm
        # tiny loss pressure keeps the cone tight where purchases vanish,
        # and a slightly stronger use-available-energy reward keeps the
        # relaxation from curtailing through fractional activations
        eps = tiebreak_eps * s.rho * costs.w_op * max(mean_price, 1e-6) * op_scale / norm
        for lid in net.line_ids:
            tiebreak[lay.col("f", s_idx, lid)] = eps
        for b in res:
            tiebreak[lay.col("pg", s_idx, b)] = -4.0 * eps

    # binary boxes and budget
    binaries = [lay.col("x", element=b) for b in res]
    if droop_on:
        binaries += [
            lay.col("y", s_idx, b) for s_idx in range(nS) for b in res
        ]
    for col in binaries:
        asm.le([(col, 1.0)], 1.0)
        asm.le([(col, -1.0)], 0.0)
    if res:
        asm.le([(lay.col("x", element=b), 1.0) for b in res], float(costs.x_max))

    for s_idx, s in enumerate(scen.scenarios):
        _scenario_block(
            asm, soc, lay, net, lines, s, s_idx, droop, droop_on, augmented, big_m
        )

    A, b_eq, G, h = asm.matrices()
    meta = {
        "droop_model": droop_model,
        "relaxation": relaxation,
        "norm_cost": norm,
        "op_scale": op_scale,
        "install": install,
        "rho": [s.rho for s in scen.scenarios],
        "price": prices,
        "w_inv": costs.w_inv,
        "w_op": costs.w_op,
        "res_buses": res,
        "line_ids": net.line_ids,
        "tiebreak_eps": tiebreak_eps,
        "v_op": {b: droop[b].params.v_op for b in res},
        "x_max": costs.x_max,
        "p_ava": [{b: s.p_ava.get(b, 0.0) for b in res} for s in scen.scenarios],
    }
    return ConicProgram(
        n_vars=lay.n_vars,
        objective=c,
        eq=A,
        eq_rhs=b_eq,
        ineq=G,
        ineq_rhs=h,
        soc_blocks=soc,
        binaries=sorted(binaries),
        big_m=big_m,
        layout=lay,
        meta=meta,
        tiebreak=tiebreak,
    )


def _scenario_block(asm, soc, lay, net, lines, s, s_idx, droop, droop_on, augmented, big_m):
    res = net.res_buses

    def col(fam, element=None):
        return lay.col(fam, s_idx, element)

    # physical branch flow: voltage drop, power balance, current cone
    for lid in net.line_ids:
        ln = lines[lid]
        z2 = abs(ln.z) ** 2
        load_p = s.load_p.get(lid, 0.0)
        load_q = s.load_q.get(lid, 0.0)
        # (voltage drop)  v_l - v_up + 2 r P + 2 x Q - |z|^2 f = 0
        coefs = [
            (col("v", lid), 1.0),
            (col("P", lid), 2.0 * ln.r),
            (col("Q", lid), 2.0 * ln.x_reactance),
            (col("f", lid), -z2),
        ]
        rhs = 0.0
        if ln.up == 0:
            rhs = net.v0
        else:
            coefs.append((col("v", ln.up), -1.0))
        asm.eq(coefs, rhs)
        # (power balance)  P_l - sum(child P) - r f + pg = loadP
        coefs_p = [(col("P", lid), 1.0), (col("f", lid), -ln.r)]
        coefs_q = [(col("Q", lid), 1.0), (col("f", lid), -ln.x_reactance)]
        for m in net.children.get(lid, ()):
            coefs_p.append((col("P", m), -1.0))
            coefs_q.append((col("Q", m), -1.0))
        if lid in lay.res_pos:
            coefs_p.append((col("pg", lid), 1.0))
            coefs_q.append((col("qg", lid), 1.0))
        asm.eq(coefs_p, load_p)
        asm.eq(coefs_q, load_q)
        # current cone f*v >= P^2 + Q^2 plus scalar nonnegativity
        soc.append((col("f", lid), col("v", lid), (col("P", lid), col("Q", lid))))
        asm.le([(col("f", lid), -1.0)], 0.0)
        asm.le([(col("v", lid), -1.0)], 0.0)
        # voltage limits
        bus = net.bus(lid)
        asm.le([(col("v", lid), -1.0)], -bus.v_min)
        if augmented:
            asm.le([(col("vhat", lid), 1.0)], bus.v_max)
            asm.le([(col("fbar", lid), 1.0)], ln.i_max)
        else:
            asm.le([(col("v", lid), 1.0)], bus.v_max)
            asm.le([(col("f", lid), 1.0)], ln.i_max)

    # purchase linearization at the feeder head
    head = [(col("Ppur"), -1.0)]
    for lid in net.slack_lines:
        head.append((col("P", lid), 1.0))
    asm.le(head, 0.0)
    asm.le([(col("Ppur"), -1.0)], 0.0)

    # droop switching per controllable source
    for bus_id in res:
        prm = droop[bus_id].params
        spec = droop[bus_id].spec
        p_ava = s.p_ava.get(bus_id, 0.0)
        a_p = prm.sign * prm.alpha_p
        a_q = prm.sign * prm.alpha_q
        if droop_on:
            m6, m7a, m7b = big_m["(6)"], big_m["(7.a)"], big_m["(7.b)"]
            m8a, m8b, mp = big_m["(8.a)"], big_m["(8.b)"], big_m["(patch)"]
            ycol = col("y", bus_id)
            # activation indicator: v <= v_op + M y ; v >= v_op - M (1-y)
            asm.le([(col("v", bus_id), 1.0), (ycol, -m6)], prm.v_op)
            asm.le([(col("v", bus_id), -1.0), (ycol, m6)], m6 - prm.v_op)
            # output cap and full-output switch
            asm.le([(col("pg", bus_id), 1.0)], p_ava)
            asm.le([(col("pg", bus_id), -1.0), (ycol, -m7a)], -p_ava)
            # curtailment line when y = x = 1
            base = p_ava + a_p * prm.v_op
            asm.le(
                [(col("pg", bus_id), 1.0), (col("v", bus_id), a_p), (ycol, m7b), (col("x", element=bus_id), m7b)],
                base + 2.0 * m7b,
            )
            asm.le(
                [(col("pg", bus_id), -1.0), (col("v", bus_id), -a_p), (ycol, m7b), (col("x", element=bus_id), m7b)],
                -base + 2.0 * m7b,
            )
            # uncontrolled sources cannot curtail
            asm.le([(col("pg", bus_id), -1.0), (lay.col("x", element=bus_id), -mp)], -p_ava)
            # reactive: zero when uncontrolled, droop line when controlled
            asm.le([(col("qg", bus_id), 1.0), (lay.col("x", element=bus_id), -m8a)], 0.0)
            asm.le([(col("qg", bus_id), -1.0), (lay.col("x", element=bus_id), -m8a)], 0.0)
            qbase = a_q * prm.v_0q
            asm.le(
                [(col("qg", bus_id), 1.0), (col("v", bus_id), a_q), (lay.col("x", element=bus_id), m8b)],
                qbase + m8b,
            )
            asm.le(
                [(col("qg", bus_id), -1.0), (col("v", bus_id), -a_q), (lay.col("x", element=bus_id), m8b)],
                -qbase + m8b,
            )
            if augmented:
                # same switching on the bound system
                asm.le([(col("pghat", bus_id), 1.0)], p_ava)
                asm.le([(col("pghat", bus_id), -1.0), (ycol, -m7a)], -p_ava)
                asm.le(
                    [(col("pghat", bus_id), 1.0), (col("vhat", bus_id), a_p), (ycol, m7b), (lay.col("x", element=bus_id), m7b)],
                    base + 2.0 * m7b,
                )
                asm.le(
                    [(col("pghat", bus_id), -1.0), (col("vhat", bus_id), -a_p), (ycol, m7b), (lay.col("x", element=bus_id), m7b)],
                    -base + 2.0 * m7b,
                )
                asm.le([(col("pghat", bus_id), -1.0), (lay.col("x", element=bus_id), -mp)], -p_ava)
                asm.le([(col("qghat", bus_id), 1.0), (lay.col("x", element=bus_id), -m8a)], 0.0)
                asm.le([(col("qghat", bus_id), -1.0), (lay.col("x", element=bus_id), -m8a)], 0.0)
                asm.le(
                    [(col("qghat", bus_id), 1.0), (col("vhat", bus_id), a_q), (lay.col("x", element=bus_id), m8b)],
                    qbase + m8b,
                )
                asm.le(
                    [(col("qghat", bus_id), -1.0), (col("vhat", bus_id), -a_q), (lay.col("x", element=bus_id), m8b)],
                    -qbase + m8b,
                )
        else:
            # no droop model: ideal dispatch within capacity when controlled
            xcol = lay.col("x", element=bus_id)
            asm.le([(col("pg", bus_id), 1.0)], p_ava)
            asm.le([(col("pg", bus_id), -1.0), (xcol, -p_ava)], -p_ava)
            asm.le([(col("qg", bus_id), 1.0), (xcol, -spec.s_max)], 0.0)
            asm.le([(col("qg", bus_id), -1.0), (xcol, -spec.s_max)], 0.0)

    if not augmented:
        return

    # bound system: lossless flows and voltages
    hat_inj = "pghat" if droop_on else "pg"
    hat_inj_q = "qghat" if droop_on else "qg"
    for lid in net.line_ids:
        ln = lines[lid]
        load_p = s.load_p.get(lid, 0.0)
        load_q = s.load_q.get(lid, 0.0)
        coefs_p = [(col("Phat", lid), 1.0)]
        coefs_q = [(col("Qhat", lid), 1.0)]
        coefs_pu = [(col("Pun", lid), 1.0)]
        coefs_qu = [(col("Qun", lid), 1.0)]
        coefs_po = [(col("Pov", lid), 1.0), (col("fbar", lid), -ln.r)]
        coefs_qo = [(col("Qov", lid), 1.0), (col("fbar", lid), -ln.x_reactance)]
        for m in net.children.get(lid, ()):
            coefs_p.append((col("Phat", m), -1.0))
            coefs_q.append((col("Qhat", m), -1.0))
            coefs_pu.append((col("Pun", m), -1.0))
            coefs_qu.append((col("Qun", m), -1.0))
            coefs_po.append((col("Pov", m), -1.0))
            coefs_qo.append((col("Qov", m), -1.0))
        if lid in lay.res_pos:
            coefs_p.append((col(hat_inj, lid), 1.0))
            coefs_q.append((col(hat_inj_q, lid), 1.0))
            coefs_pu.append((col("pg", lid), 1.0))
            coefs_qu.append((col("qg", lid), 1.0))
            coefs_po.append((col("pg", lid), 1.0))
            coefs_qo.append((col("qg", lid), 1.0))
        asm.eq(coefs_p, load_p)
        asm.eq(coefs_q, load_q)
        asm.eq(coefs_pu, load_p)
        asm.eq(coefs_qu, load_q)
        asm.eq(coefs_po, load_p)
        asm.eq(coefs_qo, load_q)
        # lossless voltage drop
        coefs_v = [
            (col("vhat", lid), 1.0),
            (col("Phat", lid), 2.0 * ln.r),
            (col("Qhat", lid), 2.0 * ln.x_reactance),
        ]
        rhs = 0.0
        if ln.up == 0:
            rhs = net.v0
        else:
            coefs_v.append((col("vhat", ln.up), -1.0))
        asm.eq(coefs_v, rhs)
        # bounding current: every flow-bound combination under fbar * v_up
        up_col = col("vroot") if ln.up == 0 else col("v", ln.up)
        for pc in ("Pun", "Pov"):
            for qc in ("Qun", "Qov"):
                soc.append((col("fbar", lid), up_col, (col(pc, lid), col(qc, lid))))
        asm.le([(col("fbar", lid), -1.0)], 0.0)
    asm.eq([(col("vroot"), 1.0)], net.v0)
    asm.le([(col("vroot"), -1.0)], 0.0)


# ---------------------------------------------------------------------------
# canonical solver form, point checking, extraction
# ---------------------------------------------------------------------------


@dataclass
class CanonicalForm:
    """Conic triple for the solver, with fixed binaries folded into rhs."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cone_l: int
    cone_q: list[int]
    keep: np.ndarray
    fixed: dict[int, float]
    obj_const: float
    trivially_infeasible: bool = False

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(len(self.keep) + len(self.fixed))
        full[self.keep] = reduced
        for colidx, val in self.fixed.items():
            full[colidx] = val
        return full


_PRESOLVE_TOL = 1e-9


def _compress_inequalities(G: sp.csr_matrix, h: np.ndarray):
    """Collapse rows bounding the same expression.

    Fixing binaries turns opposing big-M rows into zero-width strips; an
    interior-point method has no strictly feasible slack there.  Rows are
    grouped by their (sign-normalized) support, reduced to the tightest
    lower/upper bound, and zero-width groups become equality rows.
    Returns (keep_G, keep_h, eq_rows, eq_rhs, infeasible).
    """
    G = G.tocsr()
    groups: dict = {}
    empties_infeasible = False
    for i in range(G.shape[0]):
        lo, hi = G.indptr[i], G.indptr[i + 1]
        cols = G.indices[lo:hi]
        vals = G.data[lo:hi]
        live = np.abs(vals) > 1e-14
        cols, vals = cols[live], vals[live]
        if len(cols) == 0:
            if h[i] < -_PRESOLVE_TOL:
                empties_infeasible = True
            continue
        order = np.argsort(cols)
        cols, vals = cols[order], vals[order]
        flip = vals[0] < 0.0
        sig_vals = -vals if flip else vals
        key = (cols.tobytes(), np.round(sig_vals, 12).tobytes())
        entry = groups.setdefault(key, {"cols": cols, "vals": sig_vals, "lo": -np.inf, "hi": np.inf})
        if flip:
            entry["lo"] = max(entry["lo"], -h[i])
        else:
            entry["hi"] = min(entry["hi"], h[i])

    rows_keep = []
    rhs_keep = []
    eq_rows = []
    eq_rhs = []
    infeasible = empties_infeasible
    for entry in groups.values():
        width = entry["hi"] - entry["lo"]
        if width < -_PRESOLVE_TOL:
            infeasible = True
            continue
        if width <= _PRESOLVE_TOL:
            eq_rows.append((entry["cols"], entry["vals"]))
            eq_rhs.append(0.5 * (entry["hi"] + entry["lo"]))
            continue
        if np.isfinite(entry["hi"]):
            rows_keep.append((entry["cols"], entry["vals"]))
            rhs_keep.append(entry["hi"])
        if np.isfinite(entry["lo"]):
            rows_keep.append((entry["cols"], -entry["vals"]))
            rhs_keep.append(-entry["lo"])
    return rows_keep, rhs_keep, eq_rows, eq_rhs, infeasible


def _rows_to_csr(rows, n):
    r, c, v = [], [], []
    for i, (cols, vals) in enumerate(rows):
        r.extend([i] * len(cols))
        c.extend(cols.tolist())
        v.extend(vals.tolist())
    return sp.coo_matrix((v, (r, c)), shape=(len(rows), n)).tocsr()


def canonicalize(prog: ConicProgram, fixed: Optional[dict[int, float]] = None) -> CanonicalForm:
    """Rewrite the program as (c, A, b, G, h, cones) for the solver.

    Inequality rows become the nonnegative part of the cone; each rotated
    block (a, b, w) contributes the second-order rows (a+b, a-b, 2w).
    Binary columns in ``fixed`` are substituted and removed, then the
    inequality system is compressed: redundant bounds drop, zero-width
    two-sided bounds become equalities, contradictions short-circuit into
    ``trivially_infeasible``.
    """
    fixed = dict(fixed or {})
    bad = [cix for cix in fixed if cix not in set(prog.binaries)]
    if bad:
        raise InternalError(f"fixing non-binary columns {bad}")
    n = prog.n_vars
    keep_mask = np.ones(n, dtype=bool)
    for cix in fixed:
        keep_mask[cix] = False
    keep = np.where(keep_mask)[0]

    soc_rows = []
    soc_cols = []
    soc_vals = []
    q_dims = []
    r = 0
    for a_col, b_col, w_cols in prog.soc_blocks:
        cols = (a_col, b_col) + tuple(w_cols)
        if any(not keep_mask[cix] for cix in cols):
            raise InternalError("cone references a fixed column")
        soc_rows += [r, r, r + 1, r + 1]
        soc_cols += [a_col, b_col, a_col, b_col]
        soc_vals += [-1.0, -1.0, -1.0, 1.0]
        for i, w in enumerate(w_cols):
            soc_rows.append(r + 2 + i)
            soc_cols.append(w)
            soc_vals.append(-2.0)
        q_dims.append(2 + len(w_cols))
        r += 2 + len(w_cols)
    G_soc = sp.coo_matrix((soc_vals, (soc_rows, soc_cols)), shape=(r, n)).tocsr()

    G_ineq = prog.ineq.tocsc()
    h_ineq = prog.ineq_rhs.copy()
    A_full = prog.eq.tocsc()
    b_full = prog.eq_rhs.copy()
    cost = prog.solver_cost()
    obj_const = 0.0
    if fixed:
        fix_cols = np.array(sorted(fixed))
        fix_vals = np.array([fixed[cix] for cix in fix_cols])
        b_full = b_full - A_full[:, fix_cols] @ fix_vals
        h_ineq = h_ineq - (G_ineq[:, fix_cols] @ fix_vals)
        obj_const = float(prog.objective[fix_cols] @ fix_vals)

    G_red = G_ineq[:, keep].tocsr()
    rows_keep, rhs_keep, eq_rows, eq_rhs, infeasible = _compress_inequalities(
        G_red, h_ineq
    )
    nk = len(keep)
    G_out = _rows_to_csr(rows_keep, nk)
    h_out = np.asarray(rhs_keep)
    A_red = A_full[:, keep].tocsr()
    # drop emptied equality rows; flag contradictions
    row_nnz = np.diff(A_red.indptr)
    empty = row_nnz == 0
    if np.any(empty):
        if np.any(np.abs(b_full[empty]) > _PRESOLVE_TOL):
            infeasible = True
        A_red = A_red[~empty]
        b_full = b_full[~empty]
    if eq_rows:
        A_red = sp.vstack([A_red, _rows_to_csr(eq_rows, nk)], format="csr")
        b_full = np.concatenate([b_full, eq_rhs])

    G_all = sp.vstack([G_out, G_soc[:, keep]], format="csr")
    h_all = np.concatenate([h_out, np.zeros(r)])
    return CanonicalForm(
        c=cost[keep],
        A=A_red,
        b=b_full,
        G=G_all,
        h=h_all,
        cone_l=G_out.shape[0],
        cone_q=q_dims,
        keep=keep,
        fixed=fixed,
        obj_const=obj_const,
        trivially_infeasible=infeasible,
    )


@dataclass
class PointCheck:
    eq_inf: float
    ineq_violation: float
    min_cone_slack: float

    @property
    def max_violation(self) -> float:
        return max(self.eq_inf, self.ineq_violation, -min(self.min_cone_slack, 0.0))


def check_point(prog: ConicProgram, u: np.ndarray) -> PointCheck:
    """Worst constraint residuals of a full-length point."""
    u = np.asarray(u, dtype=float)
    if len(u) != prog.n_vars:
        raise InternalError(f"point length {len(u)} != {prog.n_vars}")
    eq = prog.eq @ u - prog.eq_rhs
    ineq = prog.ineq @ u - prog.ineq_rhs
    slack = np.inf
    for a_col, b_col, w_cols in prog.soc_blocks:
        w = u[list(w_cols)]
        slack = min(slack, u[a_col] * u[b_col] - float(w @ w))
    return PointCheck(
        eq_inf=float(np.max(np.abs(eq))) if len(eq) else 0.0,
        ineq_violation=float(max(0.0, np.max(ineq))) if len(ineq) else 0.0,
        min_cone_slack=float(slack),
    )


def extract_solution(prog: ConicProgram, raw: np.ndarray) -> PlanningSolution:
    """Name the entries of a raw solver vector.

    The objective breakdown is exact by construction: the cost vector
    touches only the placement and purchase columns, so
    w_inv*f_inv + w_op*f_op reproduces objective . raw.
    """
    raw = np.asarray(raw, dtype=float)
    if len(raw) != prog.n_vars:
        raise InternalError(f"solution length {len(raw)} != {prog.n_vars}")
    lay = prog.layout
    meta = prog.meta
    res = meta["res_buses"]
    placement = [b for b in res if raw[lay.col("x", element=b)] > 0.5]
    norm = meta["norm_cost"]
    f_inv = sum(meta["install"][b] * raw[lay.col("x", element=b)] for b in res) / norm
    f_op = 0.0
    for s_idx, (rho, price) in enumerate(zip(meta["rho"], meta["price"])):
        f_op += rho * price * meta["op_scale"] * raw[lay.col("Ppur", s_idx)] / norm
    per_scenario = {}
    nS = lay.n_scen
    for fam, (start, stop) in lay.ranges.items():
        if fam == "x":
            per_scenario[fam] = {b: float(raw[lay.col("x", element=b)]) for b in res}
            continue
        if nS == 0:
            continue
        if fam in ("Ppur", "vroot"):
            per_scenario[fam] = [float(raw[start + s]) for s in range(nS)]
            continue
        keys = res if fam in ("y", "pg", "qg", "pghat", "qghat") else meta["line_ids"]
        per_scenario[fam] = [
            {k: float(raw[lay.col(fam, s, k)]) for k in keys} for s in range(nS)
        ]
    objective = float(prog.objective @ raw)
    return PlanningSolution(
        placement=placement,
        objective=objective,
        f_inv=f_inv,
        f_op=f_op,
        per_scenario=per_scenario,
        raw=raw,
    )


def embed_point(prog, net, scen, droop, placement, ops, auxes) -> np.ndarray:
    """Build a full program point from verified operating points.

    ``ops``/``auxes`` are per-scenario results of the power-flow verifier
    (linear droop mode) and its bound-system evaluation; the droop model
    must be part of the program.
    """
    if prog.meta["droop_model"] != "on":
        raise InternalError("embedding requires the droop model in the program")
    lay = prog.layout
    placement = set(placement)
    u = np.zeros(prog.n_vars)
    for b in net.res_buses:
        u[lay.col("x", element=b)] = 1.0 if b in placement else 0.0
    augmented = prog.meta["relaxation"] == RELAXATION_AUGMENTED
    for s_idx, (op, aux) in enumerate(zip(ops, auxes)):
        for b in net.res_buses:
            u[lay.col("y", s_idx, b)] = float(aux.y[b])
            inj = op.injections.get(b, 0.0 + 0.0j)
            u[lay.col("pg", s_idx, b)] = inj.real
            u[lay.col("qg", s_idx, b)] = inj.imag
        for lid in net.line_ids:
            u[lay.col("v", s_idx, lid)] = op.v[lid]
            u[lay.col("f", s_idx, lid)] = op.f[lid]
            u[lay.col("P", s_idx, lid)] = op.flows[lid].real
            u[lay.col("Q", s_idx, lid)] = op.flows[lid].imag
        u[lay.col("Ppur", s_idx)] = max(0.0, op.slack_active_flow(net))
        if not augmented:
            continue
        u[lay.col("vroot", s_idx)] = net.v0
        for b in net.res_buses:
            hat = aux.inj_hat.get(b, 0.0 + 0.0j)
            u[lay.col("pghat", s_idx, b)] = hat.real
            u[lay.col("qghat", s_idx, b)] = hat.imag
        for lid in net.line_ids:
            u[lay.col("vhat", s_idx, lid)] = aux.v_hat[lid]
            u[lay.col("Phat", s_idx, lid)] = aux.s_hat_flow[lid].real
            u[lay.col("Qhat", s_idx, lid)] = aux.s_hat_flow[lid].imag
            u[lay.col("Pun", s_idx, lid)] = aux.s_under[lid].real
            u[lay.col("Qun", s_idx, lid)] = aux.s_under[lid].imag
            u[lay.col("Pov", s_idx, lid)] = aux.s_over[lid].real
            u[lay.col("Qov", s_idx, lid)] = aux.s_over[lid].imag
            u[lay.col("fbar", s_idx, lid)] = aux.f_bar[lid]
    return u


def export_text(prog: ConicProgram, path) -> None:
    """Dump the program in a plain sparse text format.

    Layout: a header line ``DIMS n_vars n_eq n_ineq n_cones n_binaries``;
    ``OBJ col val`` entries; ``EQ row col val`` / ``EQRHS row val``;
    ``INEQ`` / ``INEQRHS`` likewise; ``CONE a_col b_col w_col...`` per
    rotated block; ``BIN col``; ``BIGM name value``.
    """
    with open(path, "w") as fh:
        fh.write(
            f"DIMS {prog.n_vars} {prog.eq.shape[0]} {prog.ineq.shape[0]} "
            f"{len(prog.soc_blocks)} {len(prog.binaries)}\n"
        )
        for cix in np.nonzero(prog.objective)[0]:
            fh.write(f"OBJ {cix} {prog.objective[cix]:.17g}\n")
        eq = prog.eq.tocoo()
        for r, cix, v in zip(eq.row, eq.col, eq.data):
            fh.write(f"EQ {r} {cix} {v:.17g}\n")
        for r, v in enumerate(prog.eq_rhs):
            if v != 0.0:
                fh.write(f"EQRHS {r} {v:.17g}\n")
        ineq = prog.ineq.tocoo()
        for r, cix, v in zip(ineq.row, ineq.col, ineq.data):
            fh.write(f"INEQ {r} {cix} {v:.17g}\n")
        for r, v in enumerate(prog.ineq_rhs):
            if v != 0.0:
                fh.write(f"INEQRHS {r} {v:.17g}\n")
        for a_col, b_col, w_cols in prog.soc_blocks:
            fh.write("CONE " + " ".join(str(cix) for cix in (a_col, b_col, *w_cols)) + "\n")
        for cix in prog.binaries:
            fh.write(f"BIN {cix}\n")
        for name, val in prog.big_m.items():
            fh.write(f"BIGM {name} {val:.17g}\n")
