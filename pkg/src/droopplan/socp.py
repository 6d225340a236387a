"""Second-order cone solver: primal-dual interior point from scratch.

The public problem form keeps every variable in a cone block::

    minimize    c'u
    subject to  A u = b
                u = [free | nonneg | rotated-SOC blocks]

where a rotated block (a, b, w) means a*b >= ||w||^2 with a, b >= 0.
Internally the problem is rewritten into the classic conic triple

    minimize    c'x   s.t.   A x = b,  G x + s = h,  s in K

with K a product of a nonnegative orthant and plain second-order cones
(each rotated block maps to the SOC rows (a+b, a-b, 2w)).  The solve is
a homogeneous self-dual embedding walked with Nesterov-Todd scaled
Mehrotra predictor-corrector steps; every KKT system is factorized as a
statically regularized sparse LU with one round of iterative refinement
against the unregularized matrix.  Infeasible and unbounded problems
terminate with certificates instead of an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, SolverError

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_MAX_ITER = "max_iter"

_STATIC_REG = 1e-8
_STEP_BACKOFF = 0.99
_MAX_ITER_DEFAULT = 200


# ---------------------------------------------------------------------------
# problem containers
# ---------------------------------------------------------------------------


@dataclass
class ConeProblem:
    """Standard-form cone program over a partitioned variable vector."""

    c: np.ndarray
    A: sp.spmatrix
    b: np.ndarray
    n_free: int
    n_nonneg: int
    rsoc_dims: tuple[int, ...] = ()

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csr_matrix(self.A, dtype=float)
        n = self.n_free + self.n_nonneg + sum(self.rsoc_dims)
        if self.A.shape != (len(self.b), len(self.c)) or len(self.c) != n:
            raise InputError(
                f"inconsistent cone problem dimensions: A {self.A.shape}, "
                f"c {len(self.c)}, b {len(self.b)}, blocks {n}"
            )
        for d in self.rsoc_dims:
            if d < 3:
                raise InputError("rotated cone blocks need at least 3 entries")

    @property
    def n_vars(self) -> int:
        return len(self.c)


@dataclass
class ResidualReport:
    eq_inf: float
    max_nonneg_violation: float
    min_cone_slack: float

    @property
    def max_violation(self) -> float:
        return max(self.eq_inf, self.max_nonneg_violation, -min(self.min_cone_slack, 0.0))


@dataclass
class SolveResult:
    status: str
    primal: Optional[np.ndarray]
    dual: Optional[np.ndarray]
    gap: float
    residuals: dict
    iterations: int
    obj: Optional[float] = None
    cone_dual: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# cone product machinery (nonneg orthant + plain SOCs), vectorized per dim
# ---------------------------------------------------------------------------


class ConeLayout:
    """Index bookkeeping for K = R+^l x SOC(d1) x SOC(d2) x ..."""

    def __init__(self, l: int, q: list[int]):
        self.l = int(l)
        self.q = [int(d) for d in q]
        self.m = self.l + sum(self.q)
        self.degree = self.l + len(self.q)
        groups: dict[int, list[int]] = {}
        off = self.l
        for d in self.q:
            groups.setdefault(d, []).append(off)
            off += d
        # idx[d] has shape (B, d): absolute positions of each block
        self.idx = {
            d: np.asarray(offs)[:, None] + np.arange(d)[None, :]
            for d, offs in groups.items()
        }

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[: self.l] = 1.0
        for d, idx in self.idx.items():
            e[idx[:, 0]] = 1.0
        return e

    def inside(self, u: np.ndarray, margin: float = 0.0) -> bool:
        if self.l and np.min(u[: self.l]) <= margin:
            return False
        for d, idx in self.idx.items():
            blocks = u[idx]
            if np.min(blocks[:, 0] - np.linalg.norm(blocks[:, 1:], axis=1)) <= margin:
                return False
        return True

    def interior_shift(self, u: np.ndarray) -> np.ndarray:
        """Shift u along the identity until it is safely interior."""
        alpha = -np.inf
        if self.l:
            alpha = max(alpha, -np.min(u[: self.l]))
        for d, idx in self.idx.items():
            blocks = u[idx]
            alpha = max(
                alpha, np.max(np.linalg.norm(blocks[:, 1:], axis=1) - blocks[:, 0])
            )
        if alpha < 0.0:
            return u.copy()
        return u + (1.0 + alpha) * self.identity()

    def prod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.m)
        out[: self.l] = u[: self.l] * v[: self.l]
        for d, idx in self.idx.items():
            ub, vb = u[idx], v[idx]
            head = np.einsum("bi,bi->b", ub, vb)
            tail = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
            out[idx[:, 0]] = head
            out[idx[:, 1:]] = tail
        return out

    def lam_solve(self, lam: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Solve lam o u = rhs for u."""
        out = np.empty(self.m)
        out[: self.l] = rhs[: self.l] / lam[: self.l]
        for d, idx in self.idx.items():
            lb, rb = lam[idx], rhs[idx]
            det = lb[:, 0] ** 2 - np.einsum("bi,bi->b", lb[:, 1:], lb[:, 1:])
            u0 = (lb[:, 0] * rb[:, 0] - np.einsum("bi,bi->b", lb[:, 1:], rb[:, 1:])) / det
            u1 = (rb[:, 1:] - u0[:, None] * lb[:, 1:]) / lb[:, :1]
            out[idx[:, 0]] = u0
            out[idx[:, 1:]] = u1
        return out

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest alpha with u + alpha*du still in the cone."""
        alpha = np.inf
        if self.l:
            neg = du[: self.l] < 0.0
            if np.any(neg):
                alpha = min(alpha, np.min(-u[: self.l][neg] / du[: self.l][neg]))
        for d, idx in self.idx.items():
            ub, db = u[idx], du[idx]
            a = db[:, 0] ** 2 - np.einsum("bi,bi->b", db[:, 1:], db[:, 1:])
            bq = ub[:, 0] * db[:, 0] - np.einsum("bi,bi->b", ub[:, 1:], db[:, 1:])
            cq = np.maximum(
                ub[:, 0] ** 2 - np.einsum("bi,bi->b", ub[:, 1:], ub[:, 1:]), 0.0
            )
            steps = _quad_boundary(a, bq, cq)
            if len(steps):
                alpha = min(alpha, float(np.min(steps)))
        return alpha


def _quad_boundary(a, b, c):
    """Smallest positive root of a t^2 + 2 b t + c = 0 per entry (inf if none).

    c >= 0 is assumed (the current point is feasible), so the feasible
    step set is the interval up to the first positive root.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    out = np.full(a.shape, np.inf)
    disc = b * b - a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = (-b - sq) / a
        r2 = (-b + sq) / a
        rlin = -c / (2.0 * b)
    quad = np.abs(a) > 1e-300
    crossing = quad & (disc >= 0.0)
    r1 = np.where(crossing & (r1 > 1e-300), r1, np.inf)
    r2 = np.where(crossing & (r2 > 1e-300), r2, np.inf)
    out = np.minimum(r1, r2)
    lin = ~quad & (b < -1e-300)
    out = np.where(lin, rlin, out)
    return out


class NTScaling:
    """Nesterov-Todd scaling W with W z = W^{-T} s = lambda."""

    def __init__(self, cone: ConeLayout, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        l = cone.l
        self.w_lp = np.sqrt(s[:l] / z[:l]) if l else np.zeros(0)
        self.lmbda = np.empty(cone.m)
        self.lmbda[:l] = np.sqrt(s[:l] * z[:l])
        self.v = {}
        self.beta = {}
        for d, idx in cone.idx.items():
            sb, zb = s[idx], z[idx]
            rs = np.sqrt(sb[:, 0] ** 2 - np.einsum("bi,bi->b", sb[:, 1:], sb[:, 1:]))
            rz = np.sqrt(zb[:, 0] ** 2 - np.einsum("bi,bi->b", zb[:, 1:], zb[:, 1:]))
            sn = sb / rs[:, None]
            zn = zb / rz[:, None]
            gamma = np.sqrt((1.0 + np.einsum("bi,bi->b", sn, zn)) / 2.0)
            wbar = np.empty_like(sn)
            wbar[:, 0] = (sn[:, 0] + zn[:, 0]) / (2.0 * gamma)
            wbar[:, 1:] = (sn[:, 1:] - zn[:, 1:]) / (2.0 * gamma[:, None])
            v = wbar.copy()
            v[:, 0] += 1.0
            v /= np.sqrt(2.0 * (wbar[:, 0] + 1.0))[:, None]
            self.v[d] = v
            self.beta[d] = np.sqrt(rs / rz)
            lam = self._apply_group(d, zb, inverse=False)
            self.lmbda[idx] = lam

    def _apply_group(self, d: int, ub: np.ndarray, inverse: bool) -> np.ndarray:
        """Apply W (or W^-1) of one dim-group to stacked blocks."""
        v = self.v[d]
        beta = self.beta[d]
        if inverse:
            # W^-1 = (1/beta) (2 (Jv)(Jv)' - J)
            vv = v.copy()
            vv[:, 1:] *= -1.0
            scale = 1.0 / beta
        else:
            vv = v
            scale = beta
        dot = np.einsum("bi,bi->b", vv, ub)
        out = 2.0 * dot[:, None] * vv
        out[:, 0] -= ub[:, 0]
        out[:, 1:] += ub[:, 1:]
        return scale[:, None] * out

    def apply(self, u: np.ndarray, inverse: bool = False) -> np.ndarray:
        """W u (symmetric, so this is also W^T u)."""
        out = np.empty(self.cone.m)
        l = self.cone.l
        out[:l] = u[:l] / self.w_lp if inverse else u[:l] * self.w_lp
        for d, idx in self.cone.idx.items():
            out[idx] = self._apply_group(d, u[idx], inverse)
        return out

    @staticmethod
    def _sq_blocks(v: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """(beta (2vv' - J))^2 for stacked blocks."""
        d = v.shape[1]
        base = 2.0 * np.einsum("bi,bj->bij", v, v)
        base[:, np.arange(d), np.arange(d)] -= np.where(np.arange(d) == 0, 1.0, -1.0)
        return np.einsum("bij,bjk->bik", base, base) * (beta**2)[:, None, None]

    def w_squared_blocks(self):
        """W^T W: diagonal LP part and one dense matrix per SOC block."""
        blocks = {d: self._sq_blocks(self.v[d], self.beta[d]) for d in self.cone.idx}
        return self.w_lp**2, blocks

    def w_inv_squared_blocks(self):
        """(W^T W)^-1 in the same layout."""
        blocks = {}
        for d in self.cone.idx:
            jv = self.v[d].copy()
            jv[:, 1:] *= -1.0
            blocks[d] = self._sq_blocks(jv, 1.0 / self.beta[d])
        return 1.0 / self.w_lp**2, blocks


# ---------------------------------------------------------------------------
# KKT assembly: [[dI, A', G'], [A, -dI, 0], [G, 0, -W'W - dI]]
# ---------------------------------------------------------------------------


# static pivoting: the ordering is chosen once and values never trigger row
# swaps, so fill stays constant across interior-point iterations; the static
# regularization plus refinement absorbs the weak pivots
_SPLU_CANDIDATES = (
    dict(permc_spec="COLAMD", diag_pivot_thresh=0.0, options={"SymmetricMode": True}),
    dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}),
)


class _KKT:
    """Newton-system solves with a swappable elimination strategy.

    The full quasi-definite matrix is
        [dI   A'   G' ]
        [A   -dI   0  ]
        [G    0   -W^2]
    ``mode="augmented"`` factorizes it as-is (robust near the central
    path boundary); ``mode="normal"`` substitutes dz = W^-2 (G dx - rz)
    and factorizes the (n+p) reduced system (faster when cone rows
    dominate).  Both modes refine against the unregularized full system.
    """

    def __init__(
        self,
        A: sp.csr_matrix,
        G: sp.csr_matrix,
        cone: ConeLayout,
        reg: float,
        mode: str = "augmented",
    ):
        if mode not in ("augmented", "normal"):
            raise InputError(f"unknown KKT mode {mode!r}")
        self.mode = mode
        self.p, self.n = A.shape
        self.m = G.shape[0]
        self.cone = cone
        self.reg = reg
        self.A = A.tocsr()
        self.AT = self.A.T.tocsr()
        self.G = G.tocsr()
        self.GT = self.G.T.tocsr()

        # block-diagonal pattern of the scaling matrix in COO form
        rows = [np.arange(cone.l)]
        cols = [np.arange(cone.l)]
        for d, idx in cone.idx.items():
            rows.append(np.repeat(idx, d, axis=1).ravel())
            cols.append(np.tile(idx, (1, d)).ravel())
        self._w_rows = np.concatenate(rows)
        self._w_cols = np.concatenate(cols)
        if mode == "augmented":
            self._reg_sign = np.concatenate(
                [np.ones(self.n), -np.ones(self.p + self.m)]
            )
        else:
            self._reg_sign = np.concatenate([np.ones(self.n), -np.ones(self.p)])
        self._lu = None
        self._winv2 = None
        self._w2 = None
        self._scaling = None
        self._opts = None

    def _scaling_matrix(self, lp, blocks) -> sp.csr_matrix:
        parts = [lp]
        for d in self.cone.idx:
            parts.append(blocks[d].reshape(-1))
        vals = np.concatenate(parts) if parts else np.zeros(0)
        return sp.coo_matrix(
            (vals, (self._w_rows, self._w_cols)), shape=(self.m, self.m)
        ).tocsr()

    def _factor_matrix(self, K: sp.spmatrix, regd):
        if self._opts is None:
            # the sparsity pattern is fixed across iterations, so pay for
            # one ordering comparison up front and lock in the winner
            best = None
            for opts in _SPLU_CANDIDATES:
                try:
                    lu = spla.splu(K.tocsc(), **opts)
                except RuntimeError:
                    continue
                fill = lu.L.nnz + lu.U.nnz
                if best is None or fill < best[0]:
                    best = (fill, opts, lu)
                if fill <= 8 * K.nnz:
                    break
            if best is not None:
                self._opts = best[1]
                return best[2]
            self._opts = _SPLU_CANDIDATES[0]
        try:
            return spla.splu(K.tocsc(), **self._opts)
        except RuntimeError:
            try:
                return spla.splu((K + 1e4 * regd).tocsc(), **self._opts)
            except RuntimeError as exc:
                raise SolverError(f"KKT factorization failed: {exc}") from exc

    def factor(self, scaling: NTScaling):
        self._scaling = scaling
        self._w2 = self._scaling_matrix(*scaling.w_squared_blocks())
        regd = sp.diags(self.reg * self._reg_sign)
        if self.mode == "augmented":
            K = sp.bmat(
                [
                    [None, self.AT, self.GT],
                    [self.A, None, None],
                    [self.G, None, -self._w2],
                ],
                format="csc",
            )
            self._lu = self._factor_matrix(K + regd, regd)
        else:
            self._winv2 = self._scaling_matrix(*scaling.w_inv_squared_blocks())
            S = self.GT @ (self._winv2 @ self.G)
            K = sp.bmat([[S, self.AT], [self.A, None]], format="csc")
            self._lu = self._factor_matrix(K + regd, regd)

    def _base_solve(self, rx, ry, rz):
        if self.mode == "augmented":
            sol = self._lu.solve(np.concatenate([rx, ry, rz]))
            n, p = self.n, self.p
            return sol[:n], sol[n : n + p], sol[n + p :]
        top = rx + self.GT @ (self._winv2 @ rz)
        sol = self._lu.solve(np.concatenate([top, ry]))
        dx, dy = sol[: self.n], sol[self.n :]
        dz = self._winv2 @ (self.G @ dx - rz)
        return dx, dy, dz

    def solve(self, rx, ry, rz, refine: int = 3):
        """Solve the 3x3 system, refining against the unregularized matrix."""
        dx, dy, dz = self._base_solve(rx, ry, rz)
        scale = max(
            1.0,
            float(np.max(np.abs(rx))) if len(rx) else 1.0,
            float(np.max(np.abs(ry))) if len(ry) else 1.0,
            float(np.max(np.abs(rz))) if len(rz) else 1.0,
        )
        for _ in range(refine):
            r1 = rx - (self.AT @ dy + self.GT @ dz)
            r2 = ry - self.A @ dx
            r3 = rz - (self.G @ dx - self._w2 @ dz)
            err = max(
                np.max(np.abs(r1)) if len(r1) else 0.0,
                np.max(np.abs(r2)) if len(r2) else 0.0,
                np.max(np.abs(r3)) if len(r3) else 0.0,
            )
            if err <= 1e-14 * scale:
                break
            ex, ey, ez = self._base_solve(r1, r2, r3)
            dx = dx + ex
            dy = dy + ey
            dz = dz + ez
        return dx, dy, dz


# ---------------------------------------------------------------------------
# the homogeneous embedding
# ---------------------------------------------------------------------------


def solve_triple(
    c: np.ndarray,
    A: sp.spmatrix,
    b: np.ndarray,
    G: sp.spmatrix,
    h: np.ndarray,
    cone: ConeLayout,
    tol: float = 1e-8,
    feastol: Optional[float] = None,
    max_iter: int = _MAX_ITER_DEFAULT,
    want_trace: bool = False,
    kkt_mode: str = "augmented",
) -> dict:
    """Solve the conic triple; returns a raw result dictionary.

    Statuses: optimal / infeasible (with dual ray y, z) / unbounded
    (with primal ray x) / max_iter.
    """
    feastol = tol if feastol is None else feastol
    c = np.asarray(c, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    h = np.asarray(h, dtype=float).ravel()
    A = sp.csr_matrix(A, dtype=float)
    G = sp.csr_matrix(G, dtype=float)
    n = len(c)
    p, m = len(b), len(h)
    if cone.m != m:
        raise InputError(f"cone size {cone.m} != rows of G {m}")
    if m == 0:
        raise InputError("problem needs at least one cone row")

    # quick structural infeasibility: an all-zero equality row with b != 0
    if p:
        row_nnz = np.diff(A.indptr)
        bad = np.where((row_nnz == 0) & (np.abs(b) > 0.0))[0]
        if len(bad):
            y = np.zeros(p)
            y[bad[0]] = -np.sign(b[bad[0]])
            return {
                "status": STATUS_INFEASIBLE,
                "y": y,
                "z": np.zeros(m),
                "iterations": 0,
                "trace": [],
            }

    scale = max(1.0, np.linalg.norm(c), np.linalg.norm(b), np.linalg.norm(h))
    kkt = _KKT(A, G, cone, _STATIC_REG * scale, mode=kkt_mode)

    # -- initial point: least-squares primal/dual shifted into the cone
    ident = NTScaling(cone, cone.identity(), cone.identity())
    kkt.factor(ident)
    x0, _, z0 = kkt.solve(np.zeros(n), b, h)
    s = cone.interior_shift(-(G @ x0 - h))
    x = x0
    x1, y0, z1 = kkt.solve(-c, np.zeros(p), np.zeros(m))
    y = y0
    z = cone.interior_shift(z1)
    tau, kappa = 1.0, 1.0

    nu = cone.degree + 1
    bn = 1.0 + np.linalg.norm(b)
    hn = 1.0 + np.linalg.norm(h)
    cn = 1.0 + np.linalg.norm(c)
    trace = []
    best = None

    for it in range(max_iter):
        e1 = A.T @ y + G.T @ z + c * tau
        e2 = A @ x - b * tau
        e3 = G @ x + s - h * tau
        gap_lin = float(c @ x + b @ y + h @ z)
        e4 = gap_lin + kappa
        mu = (s @ z + tau * kappa) / nu

        # convergence bookkeeping on the de-homogenized point
        xt, yt, zt, st = x / tau, y / tau, z / tau, s / tau
        pres = max(np.linalg.norm(A @ xt - b) / bn, np.linalg.norm(G @ xt + st - h) / hn)
        dres = np.linalg.norm(A.T @ yt + G.T @ zt + c) / cn
        pcost = float(c @ xt)
        dcost = float(-b @ yt - h @ zt)
        gap_abs = float(st @ zt)
        relgap = gap_abs / max(1.0, abs(pcost), abs(dcost))
        if want_trace:
            trace.append(
                {"iter": it, "mu": mu, "pres": pres, "dres": dres, "relgap": relgap}
            )

        if pres <= feastol and dres <= feastol and relgap <= tol:
            return {
                "status": STATUS_OPTIMAL,
                "x": xt,
                "y": yt,
                "z": zt,
                "s": st,
                "obj": pcost,
                "gap": relgap,
                "pres": pres,
                "dres": dres,
                "iterations": it,
                "trace": trace,
            }

        # certificate checks
        by_hz = float(b @ y + h @ z)
        if by_hz < -1e-12:
            yc, zc = y / -by_hz, z / -by_hz
            cert_res = np.linalg.norm(A.T @ yc + G.T @ zc) / cn
            if cert_res <= feastol and cone.inside(zc, margin=-feastol):
                return {
                    "status": STATUS_INFEASIBLE,
                    "y": yc,
                    "z": zc,
                    "iterations": it,
                    "trace": trace,
                }
        ctx = float(c @ x)
        if ctx < -1e-12:
            xc = x / -ctx
            ray_eq = np.linalg.norm(A @ xc) / bn
            ray_cone = np.linalg.norm(G @ xc + s / -ctx) / hn
            if ray_eq <= feastol and ray_cone <= feastol:
                return {
                    "status": STATUS_UNBOUNDED,
                    "x": xc,
                    "s": s / -ctx,
                    "iterations": it,
                    "trace": trace,
                }

        scaling = NTScaling(cone, s, z)
        lmbda = scaling.lmbda
        kkt.factor(scaling)
        u1 = kkt.solve(-c, b, h)
        den_u1 = float(c @ u1[0] + b @ u1[1] + h @ u1[2])

        def direction(eta, d_lam, d_kap):
            rhs_z = -eta * e3 - scaling.apply(d_lam)
            u2 = kkt.solve(-eta * e1, -eta * e2, rhs_z)
            num = -eta * e4 - d_kap / tau - (c @ u2[0] + b @ u2[1] + h @ u2[2])
            den = den_u1 - kappa / tau
            dtau = num / den if den != 0.0 else 0.0
            dx = u2[0] + dtau * u1[0]
            dy = u2[1] + dtau * u1[1]
            dz = u2[2] + dtau * u1[2]
            ds = scaling.apply(d_lam - scaling.apply(dz))
            dkappa = (d_kap - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        # predictor
        d_lam_aff = -lmbda
        dxa, dya, dza, dsa, dta, dka = direction(1.0, d_lam_aff, -tau * kappa)
        alpha_aff = min(
            cone.max_step(s, dsa),
            cone.max_step(z, dza),
            (-tau / dta) if dta < 0.0 else np.inf,
            (-kappa / dka) if dka < 0.0 else np.inf,
            1.0,
        )
        mu_aff = (
            (s + alpha_aff * dsa) @ (z + alpha_aff * dza)
            + (tau + alpha_aff * dta) * (kappa + alpha_aff * dka)
        ) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu))) ** 3

        # corrector
        corr = cone.prod(scaling.apply(dsa, inverse=True), scaling.apply(dza))
        rhs_lam = -cone.prod(lmbda, lmbda) - corr + sigma * mu * cone.identity()
        d_lam = cone.lam_solve(lmbda, rhs_lam)
        d_kap = -tau * kappa - dta * dka + sigma * mu
        dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, d_lam, d_kap)

        alpha = min(
            cone.max_step(s, ds),
            cone.max_step(z, dz),
            (-tau / dtau) if dtau < 0.0 else np.inf,
            (-kappa / dkappa) if dkappa < 0.0 else np.inf,
        )
        alpha = min(1.0, _STEP_BACKOFF * alpha)
        if not np.isfinite(alpha) or alpha <= 1e-13:
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkappa
        best = {
            "x": x / tau,
            "y": y / tau,
            "z": z / tau,
            "s": s / tau,
            "gap": relgap,
            "pres": pres,
            "dres": dres,
        }

    out = {
        "status": STATUS_MAX_ITER,
        "iterations": max_iter,
        "trace": trace,
    }
    if best is not None:
        out.update(
            x=best["x"],
            y=best["y"],
            z=best["z"],
            s=best["s"],
            obj=float(c @ best["x"]),
            gap=best["gap"],
            pres=best["pres"],
            dres=best["dres"],
        )
    return out


# ---------------------------------------------------------------------------
# public cone-problem API
# ---------------------------------------------------------------------------


def _embed(problem: ConeProblem):
    """Build the conic triple for a variable-in-cone problem."""
    n = problem.n_vars
    rows = []
    cols = []
    vals = []
    q_dims = []
    r = 0
    for j in range(problem.n_free, problem.n_free + problem.n_nonneg):
        rows.append(r)
        cols.append(j)
        vals.append(-1.0)
        r += 1
    off = problem.n_free + problem.n_nonneg
    for d in problem.rsoc_dims:
        a, bcol = off, off + 1
        w = list(range(off + 2, off + d))
        rows += [r, r, r + 1, r + 1]
        cols += [a, bcol, a, bcol]
        vals += [-1.0, -1.0, -1.0, 1.0]
        for i, wj in enumerate(w):
            rows.append(r + 2 + i)
            cols.append(wj)
            vals.append(-2.0)
        q_dims.append(d)
        r += d
        off += d
    G = sp.coo_matrix((vals, (rows, cols)), shape=(r, n)).tocsr()
    h = np.zeros(r)
    cone = ConeLayout(problem.n_nonneg, q_dims)
    return G, h, cone


def solve(
    problem: ConeProblem,
    tol: float = 1e-8,
    feastol: Optional[float] = None,
    max_iter: int = _MAX_ITER_DEFAULT,
    want_trace: bool = False,
    kkt_mode: str = "augmented",
) -> SolveResult:
    """Solve a ConeProblem to certified relative tolerance."""
    if not (0.0 < tol <= 1e-2):
        raise InputError(f"tol must lie in (0, 1e-2], got {tol}")
    G, h, cone = _embed(problem)
    raw = solve_triple(
        problem.c,
        problem.A,
        problem.b,
        G,
        h,
        cone,
        tol=tol,
        feastol=feastol,
        max_iter=max_iter,
        want_trace=want_trace,
        kkt_mode=kkt_mode,
    )
    status = raw["status"]
    res = {
        "primal_inf": raw.get("pres", np.inf),
        "dual_inf": raw.get("dres", np.inf),
    }
    if status == STATUS_OPTIMAL:
        return SolveResult(
            status=status,
            primal=raw["x"],
            dual=raw["y"],
            gap=raw["gap"],
            residuals=res,
            iterations=raw["iterations"],
            obj=raw["obj"],
            cone_dual=raw["z"],
            trace=raw["trace"],
        )
    if status == STATUS_INFEASIBLE:
        return SolveResult(
            status=status,
            primal=None,
            dual=raw["y"],
            gap=np.inf,
            residuals=res,
            iterations=raw["iterations"],
            cone_dual=raw["z"],
            certificate=raw["y"],
            trace=raw["trace"],
        )
    if status == STATUS_UNBOUNDED:
        return SolveResult(
            status=status,
            primal=raw["x"],
            dual=None,
            gap=-np.inf,
            residuals=res,
            iterations=raw["iterations"],
            certificate=raw["x"],
            trace=raw["trace"],
        )
    return SolveResult(
        status=STATUS_MAX_ITER,
        primal=raw.get("x"),
        dual=raw.get("y"),
        gap=raw.get("gap", np.inf),
        residuals=res,
        iterations=raw["iterations"],
        obj=raw.get("obj"),
        trace=raw.get("trace", []),
    )


def check_residuals(problem: ConeProblem, point: np.ndarray) -> ResidualReport:
    """Constraint residuals of an arbitrary point, in problem units."""
    u = np.asarray(point, dtype=float).ravel()
    if len(u) != problem.n_vars:
        raise InputError(f"point has {len(u)} entries, expected {problem.n_vars}")
    eq = problem.A @ u - problem.b
    eq_inf = float(np.max(np.abs(eq))) if len(eq) else 0.0
    nn = u[problem.n_free : problem.n_free + problem.n_nonneg]
    nn_violation = float(max(0.0, -np.min(nn))) if len(nn) else 0.0
    min_slack = np.inf
    off = problem.n_free + problem.n_nonneg
    for d in problem.rsoc_dims:
        a, bb = u[off], u[off + 1]
        w = u[off + 2 : off + d]
        min_slack = min(min_slack, a * bb - float(w @ w), a, bb)
        off += d
    if not problem.rsoc_dims:
        min_slack = np.inf
    return ResidualReport(
        eq_inf=eq_inf, max_nonneg_violation=nn_violation, min_cone_slack=float(min_slack)
    )


def write_trace_csv(result: SolveResult, path) -> None:
    """Dump the iteration log for debugging."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iter", "mu", "pres", "dres", "relgap"])
        writer.writeheader()
        for row in result.trace:
            writer.writerow(row)
