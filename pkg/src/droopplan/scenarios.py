"""Scenario reduction via K-means clustering of hourly profiles.

Every hour of the horizon becomes one observation vector (all bus loads,
all available PV powers, the grid price).  Features are standardized to
zero mean / unit variance before clustering and the centroids are mapped
back afterwards, so high-magnitude PV features cannot drown out prices.
Cluster centroids become scenarios weighted by their member fraction.

Two reductions are available: a single global K-means run, and a
calendar-stratified preset that averages within season x weekday/weekend
x 8-hour-block cells (the classic 4*2*3 = 24 grouping).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .profiles import ProfileSet

_MAX_ITER = 300
_MERGE_TOL = 1e-12

# first day-of-year (0-based) of each month, non-leap calendar
_MONTH_STARTS = np.cumsum([0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30])


@dataclass(frozen=True)
class Scenario:
    load_p: dict[int, float]
    load_q: dict[int, float]
    p_ava: dict[int, float]
    c_grid: float
    rho: float

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise InputError(f"scenario probability {self.rho} outside (0, 1]")


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]
    k: int

    def __post_init__(self):
        total = sum(s.rho for s in self.scenarios)
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"scenario probabilities sum to {total}, not 1")

    def __len__(self):
        return len(self.scenarios)

    @property
    def res_buses(self) -> list[int]:
        return sorted(self.scenarios[0].p_ava) if self.scenarios else []


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    weights: np.ndarray
    sse_trace: list = field(default_factory=list)
    iterations: int = 0


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _farthest_point_init(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(points)))
    chosen = [first]
    best = np.sum((points - points[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(best))  # argmax takes the lowest index on ties
        chosen.append(nxt)
        best = np.minimum(best, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm with deterministic farthest-point seeding.

    Ties in assignment go to the lowest centroid index; an empty cluster
    is reseeded to the point farthest from its current centroid.  The
    within-cluster sum of squares recorded in ``sse_trace`` never
    increases.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    n = len(pts)
    if n == 0:
        raise InputError("kmeans: empty input")
    if k < 1:
        raise InputError("kmeans: k must be >= 1")
    if k > n:
        raise InputError(f"kmeans: k={k} exceeds number of points {n}")

    centroids = _farthest_point_init(pts, k, seed)
    trace: list[float] = []
    assign = np.full(n, -1, dtype=int)
    for it in range(_MAX_ITER):
        d2 = _sq_dists(pts, centroids)
        new_assign = np.argmin(d2, axis=1)

        # reseed empty clusters to the worst-represented point
        for c in range(k):
            if not np.any(new_assign == c):
                worst = int(np.argmax(d2[np.arange(n), new_assign]))
                centroids[c] = pts[worst]
                d2 = _sq_dists(pts, centroids)
                new_assign = np.argmin(d2, axis=1)

        trace.append(float(d2[np.arange(n), new_assign].sum()))
        moved = False
        for c in range(k):
            members = pts[new_assign == c]
            mean = members.mean(axis=0)
            if not np.array_equal(mean, centroids[c]):
                moved = True
                centroids[c] = mean
        d2 = _sq_dists(pts, centroids)
        trace.append(float(d2[np.arange(n), new_assign].sum()))
        converged = np.array_equal(new_assign, assign) and not moved
        assign = new_assign
        if converged:
            break

    counts = np.bincount(assign, minlength=k).astype(float)
    return KMeansResult(
        centroids=centroids,
        assignments=assign,
        weights=counts / n,
        sse_trace=trace,
        iterations=(it + 1),
    )


def _observation_matrix(profiles: ProfileSet):
    """Stack hourly features: loads P, loads Q, PV availability, price."""
    buses = profiles.load_buses
    res = profiles.res_buses
    cols = [profiles.load_p[b] for b in buses]
    cols += [profiles.load_q[b] for b in buses]
    cols += [profiles.pv_available[b] for b in res]
    cols.append(np.asarray(profiles.price, dtype=float))
    feats = np.column_stack(cols)
    labels = (
        [("load_p", b) for b in buses]
        + [("load_q", b) for b in buses]
        + [("pv", b) for b in res]
        + [("price", 0)]
    )
    return feats, labels


def _centroid_to_scenario(coords, labels, rho: float) -> Scenario:
    load_p: dict[int, float] = {}
    load_q: dict[int, float] = {}
    p_ava: dict[int, float] = {}
    price = 0.0
    for (kind, bus), val in zip(labels, coords):
        if kind == "load_p":
            load_p[bus] = float(val)
        elif kind == "load_q":
            load_q[bus] = float(val)
        elif kind == "pv":
            p_ava[bus] = max(float(val), 0.0)
        else:
            price = max(float(val), 0.0)
    return Scenario(load_p=load_p, load_q=load_q, p_ava=p_ava, c_grid=price, rho=rho)


def _merge_duplicates(centroids: np.ndarray, weights: np.ndarray):
    """Collapse centroids that coincide within tolerance, summing weights."""
    kept: list[np.ndarray] = []
    kept_w: list[float] = []
    for c, w in zip(centroids, weights):
        if w == 0.0:
            continue
        for i, ref in enumerate(kept):
            if np.max(np.abs(ref - c)) <= _MERGE_TOL:
                kept_w[i] += w
                break
        else:
            kept.append(c)
            kept_w.append(float(w))
    return np.array(kept), np.array(kept_w)


def _standardize(feats: np.ndarray):
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    safe = np.where(std > 0.0, std, 1.0)
    return (feats - mean) / safe, mean, safe


def _hour_strata(horizon: int, start_weekday: int) -> np.ndarray:
    """Stratum index per hour: season(4) x weekend(2) x 8h-block(3)."""
    hours = np.arange(horizon)
    day = hours // 24
    doy = day % 365
    month = np.searchsorted(_MONTH_STARTS, doy, side="right") - 1
    season = month // 3
    weekend = (((day + start_weekday) % 7) >= 5).astype(int)
    block = (hours % 24) // 8
    return season * 6 + weekend * 3 + block


def reduce_scenarios(
    profiles: ProfileSet,
    k: int,
    seed: int = 0,
    stratified: bool = False,
) -> ScenarioSet:
    """Compress an hourly ProfileSet into k weighted scenarios.

    ``stratified=True`` replaces the global K-means run with one k=1 run
    per calendar stratum (up to 24 cells), matching the daypart/weekday/
    season grouping; ``k`` is then ignored.
    """
    feats, labels = _observation_matrix(profiles)
    if stratified:
        strata = _hour_strata(profiles.horizon_hours, profiles.start_weekday)
        cells = sorted(set(strata.tolist()))
        cents = []
        weights = []
        for cell in cells:
            mask = strata == cell
            cents.append(feats[mask].mean(axis=0))
            weights.append(mask.sum() / len(feats))
        centroids, weights = np.array(cents), np.array(weights)
    else:
        if k < 1:
            raise InputError("reduce_scenarios: k must be >= 1")
        std_feats, mean, scale = _standardize(feats)
        result = kmeans(std_feats, k, seed)
        centroids = result.centroids * scale + mean
        weights = result.weights

    centroids, weights = _merge_duplicates(centroids, weights)
    weights = weights / weights.sum()
    scen = tuple(
        _centroid_to_scenario(c, labels, float(w)) for c, w in zip(centroids, weights)
    )
    return ScenarioSet(scenarios=scen, k=len(scen))


def scenario_from_hour(profiles: ProfileSet, hour: int, rho: float = 1.0) -> Scenario:
    """Single-hour snapshot, handy for fixtures and spot checks."""
    return Scenario(
        load_p={b: float(profiles.load_p[b][hour]) for b in profiles.load_buses},
        load_q={b: float(profiles.load_q[b][hour]) for b in profiles.load_buses},
        p_ava={b: float(profiles.pv_available[b][hour]) for b in profiles.res_buses},
        c_grid=float(profiles.price[hour]),
        rho=rho,
    )
