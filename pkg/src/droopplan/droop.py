"""Voltage droop characteristics for inverter-coupled sources.

Two representations live here: the exact piecewise P-V and Q-V curves
over voltage magnitude (used by the independent power-flow verifier) and
their first-order model in squared voltage (used inside the conic
program).  The curve shape: active power holds full output up to
1.06*Vn, ramps down to ``p_min`` at 1.10*Vn and clamps there; reactive
power crosses zero at Vn with a slope of 0.44*s_max per 0.1*Vn, clamped
at +/-0.44*s_max.

Sign convention: generation falls as voltage rises for both curves, so
droop action opposes overvoltage.  The opposite orientation (reactive
output rising with voltage) is available as ``sign_convention="literal"``
for comparison runs only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputError

STABILIZING = "stabilizing"
LITERAL = "literal"

# fraction of apparent capacity available for voltage support
Q_SPAN_FRAC = 0.44
# Q-V voltage span (per unit of Vn) over which the full Q range is traversed
Q_V_SPAN = 0.1
# P-V voltage span between full output and full curtailment
P_V_SPAN = 0.04
# P-V curtailment onset (per unit of Vn)
P_V_ONSET = 1.06


@dataclass(frozen=True)
class InverterSpec:
    """Inverter capacity data, all in p.u. on the system base."""

    s_max: float
    p_max: float
    p_min: float = 0.0

    def __post_init__(self):
        if not (self.s_max >= self.p_max >= self.p_min >= 0.0):
            raise InputError(
                f"need s_max >= p_max >= p_min >= 0, got "
                f"({self.s_max}, {self.p_max}, {self.p_min})"
            )


@dataclass(frozen=True)
class LinearDroopParams:
    """First-order droop model in squared voltage.

    ``alpha_p``/``alpha_q`` are stored as the (positive) magnitudes of the
    slopes; ``sign`` is +1 for the stabilizing orientation and -1 for the
    literal one.  Active output is ``p_ava`` below ``v_op`` and
    ``p_ava - sign*alpha_p*(v - v_op)`` above it; reactive output is
    ``-sign*alpha_q*(v - v_0q)`` everywhere.  Neither branch saturates,
    mirroring the mixed-integer encoding.
    """

    v_op: float
    alpha_p: float
    v_0q: float
    alpha_q: float
    v0_ref: float
    sign: float = 1.0


@dataclass(frozen=True)
class DroopCurve:
    """Exact piecewise droop curve over voltage magnitude."""

    kind: str  # "p-v" or "q-v"
    v_n: float
    spec: InverterSpec
    sign: float = 1.0

    def __post_init__(self):
        if self.kind not in ("p-v", "q-v"):
            raise InputError(f"unknown droop curve kind {self.kind!r}")
        if self.v_n <= 0.0:
            raise InputError("nominal voltage must be positive")

    def breakpoints(self, p_ava: float):
        """(V, output) corner list, ascending in V."""
        vn = self.v_n
        if self.kind == "p-v":
            lo, hi = P_V_ONSET * vn, (P_V_ONSET + P_V_SPAN) * vn
            return [(lo, p_ava), (hi, self.spec.p_min)]
        span = Q_SPAN_FRAC * self.spec.s_max
        return [(vn - Q_V_SPAN * vn, span), (vn, 0.0), (vn + Q_V_SPAN * vn, -span)]


@dataclass(frozen=True)
class ResControl:
    """Everything the planner/verifier needs about one controllable source."""

    spec: InverterSpec
    params: LinearDroopParams
    pv_curve: DroopCurve
    qv_curve: DroopCurve


def make_control(
    v_n: float,
    v0_ref: float,
    spec: InverterSpec,
    sign_convention: str = STABILIZING,
) -> ResControl:
    """Bundle linear parameters and exact curves for one source."""
    params = linearize(v_n, v0_ref, spec, sign_convention)
    return ResControl(
        spec=spec,
        params=params,
        pv_curve=DroopCurve(kind="p-v", v_n=v_n, spec=spec, sign=params.sign),
        qv_curve=DroopCurve(kind="q-v", v_n=v_n, spec=spec, sign=params.sign),
    )


def linearize(
    v_n: float,
    v0_ref: float,
    spec: InverterSpec,
    sign_convention: str = STABILIZING,
) -> LinearDroopParams:
    """Expand both droop curves to first order in squared voltage.

    The expansion point is the squared voltage ``v0_ref`` (typically the
    squared slack setpoint).  The returned parameters place the active
    curtailment kink at ``v_op``, the reactive zero-crossing at ``v_0q``,
    and carry slope magnitudes per unit of squared voltage.
    """
    if v_n <= 0.0 or v0_ref <= 0.0:
        raise InputError("v_n and v0_ref must be positive")
    if sign_convention not in (STABILIZING, LITERAL):
        raise InputError(f"unknown sign convention {sign_convention!r}")
    root = math.sqrt(v0_ref)
    v_op = 2.0 * root * (P_V_ONSET * v_n) - v0_ref
    alpha_p = (spec.p_max - spec.p_min) / (P_V_SPAN * v_n * 2.0 * root)
    v_0q = 2.0 * root * v_n - v0_ref
    alpha_q = (Q_SPAN_FRAC * spec.s_max) / (Q_V_SPAN * v_n * 2.0 * root)
    sign = 1.0 if sign_convention == STABILIZING else -1.0
    return LinearDroopParams(
        v_op=v_op, alpha_p=alpha_p, v_0q=v_0q, alpha_q=alpha_q, v0_ref=v0_ref, sign=sign
    )


def eval_linear(params: LinearDroopParams, p_ava: float, v: float):
    """Linear-model droop outputs at squared voltage ``v`` (unclamped)."""
    if v > params.v_op:
        p_g = p_ava - params.sign * params.alpha_p * (v - params.v_op)
    else:
        p_g = p_ava
    q_g = -params.sign * params.alpha_q * (v - params.v_0q)
    return p_g, q_g


def eval_exact(curve: DroopCurve, p_ava: float, v_mag: float) -> float:
    """Exact piecewise droop output at voltage magnitude ``v_mag``."""
    if v_mag <= 0.0:
        raise InputError("voltage magnitude must be positive")
    vn = curve.v_n
    if curve.kind == "p-v":
        onset = P_V_ONSET * vn
        end = (P_V_ONSET + P_V_SPAN) * vn
        if curve.sign < 0:
            # mirrored orientation: output grows above the onset instead
            if v_mag <= onset:
                return p_ava
            frac = min((v_mag - onset) / (end - onset), 1.0)
            return p_ava + frac * (p_ava - curve.spec.p_min)
        if v_mag <= onset:
            return p_ava
        if v_mag >= end:
            return curve.spec.p_min
        frac = (v_mag - onset) / (end - onset)
        return p_ava + frac * (curve.spec.p_min - p_ava)
    span = Q_SPAN_FRAC * curve.spec.s_max
    q = -curve.sign * span * (v_mag - vn) / (Q_V_SPAN * vn)
    return max(-span, min(span, q))
