"""Ranges, inner boundaries, dilations, occupation times and the exact set inequalities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from rangewalk import _hashset as hs
from rangewalk.lattice import PointSet, RngStream, Trajectory, check_dim, unit_neighbors


def range_of(traj: Trajectory, a: int, b: int) -> PointSet:
    """Distinct points visited at times a..b inclusive."""
    if not (0 <= a <= b <= traj.n):
        raise IndexError(f"need 0 <= a <= b <= {traj.n}, got a={a}, b={b}")
    return PointSet.from_array(traj.points[a : b + 1])


def inner_boundary(lam: PointSet) -> PointSet:
    """Points of the set with at least one of their 2d neighbours outside it."""
    el = lam.elements
    return PointSet(lam.d, frozenset(z for z in el if any(q not in el for q in unit_neighbors(z))))


def dilate(lam: PointSet, times: int = 1) -> PointSet:
    """The set plus all points at distance one; applied ``times`` times."""
    el = set(lam.elements)
    for _ in range(times):
        grown = set(el)
        for z in el:
            grown.update(unit_neighbors(z))
        el = grown
    return PointSet(lam.d, frozenset(el))


@dataclass(frozen=True)
class OccupationField:
    """Visit counts of a trajectory up to a horizon, time 0 included."""

    d: int
    horizon: int
    counts: dict

    def total(self) -> int:
        return sum(self.counts.values())

    def __call__(self, lam: PointSet) -> int:
        c = self.counts
        if len(lam) < len(c):
            return sum(c.get(z, 0) for z in lam)
        return sum(v for z, v in c.items() if z in lam.elements)

    def at(self, z) -> int:
        return self.counts.get(tuple(z), 0)


def occupation(traj: Trajectory, n: int | None = None) -> OccupationField:
    n = traj.n if n is None else n
    if not (0 <= n <= traj.n):
        raise IndexError(f"horizon {n} outside 0..{traj.n}")
    counts: dict = {}
    for p in map(tuple, traj.points[: n + 1].tolist()):
        counts[p] = counts.get(p, 0) + 1
    return OccupationField(traj.d, n, counts)


@dataclass
class InclusionExclusionReport:
    union: int
    size1: int
    size2: int
    intersection: int
    ok: bool


def check_inclusion_exclusion(l1: PointSet, l2: PointSet) -> InclusionExclusionReport:
    u, i = len(l1 | l2), len(l1 & l2)
    return InclusionExclusionReport(u, len(l1), len(l2), i, u == len(l1) + len(l2) - i)


@dataclass
class BoundaryBoundsReport:
    boundary_union: int
    boundary1: int
    boundary2: int
    cross1: int  # |dL1 & L2^+|
    cross2: int  # |L1^+ & dL2|
    dilated_overlap: int  # |L1^+ & L2^+|
    inner_overlap: int  # |L1 & dL2|
    lower_fine: int
    lower_coarse: int
    upper: int
    ok: bool


def check_boundary_bounds(l1: PointSet, l2: PointSet) -> BoundaryBoundsReport:
    b1, b2 = inner_boundary(l1), inner_boundary(l2)
    p1, p2 = dilate(l1), dilate(l2)
    bu = len(inner_boundary(l1 | l2))
    c1, c2 = len(b1 & p2), len(p1 & b2)
    ov = len(p1 & p2)
    inner = len(l1 & b2)
    lower_fine = len(b1) + len(b2) - (c1 + c2)
    lower_coarse = len(b1) + len(b2) - 2 * ov
    upper = len(b1) + len(b2) - inner
    ok = bu >= lower_fine >= lower_coarse and bu <= upper
    return BoundaryBoundsReport(bu, len(b1), len(b2), c1, c2, ov, inner, lower_fine, lower_coarse, upper, ok)


@dataclass
class SuperadditivityReport:
    boundary_union: int
    boundary_sum: int
    overlap_terms: list[int]
    lower: int
    ok: bool


def check_superadditivity(sets: Sequence[PointSet]) -> SuperadditivityReport:
    if len(sets) < 1:
        raise ValueError("need at least one set")
    union = PointSet(sets[0].d)
    dil_union = PointSet(sets[0].d)
    terms = []
    for i, s in enumerate(sets):
        sp = dilate(s)
        if i > 0:
            terms.append(len(sp & dil_union))
        union = union | s
        dil_union = dil_union | sp
    bsum = sum(len(inner_boundary(s)) for s in sets)
    lower = bsum - 2 * sum(terms)
    bu = len(inner_boundary(union))
    return SuperadditivityReport(bu, bsum, terms, lower, bu >= lower)


@dataclass
class DilationBoundReport:
    lhs: int  # |L^+ & G^+|
    overlap: int  # |L^{++} & G|
    d: int

    @property
    def ok(self) -> bool:
        """lhs <= 2d |L^{++} & G| (fails e.g. for L = G = {0}, where lhs = 2d + 1)."""
        return self.lhs <= 2 * self.d * self.overlap

    @property
    def ok_counting(self) -> bool:
        """lhs <= (2d + 1) |L^{++} & G|: each z in L^+ & G^+ lies within distance 1 of some point of L^{++} & G."""
        return self.lhs <= (2 * self.d + 1) * self.overlap


def check_dilation_bound(lam: PointSet, gam: PointSet) -> DilationBoundReport:
    lhs = len(dilate(lam) & dilate(gam))
    return DilationBoundReport(lhs, len(dilate(lam, 2) & gam), lam.d)


# ---------------------------------------------------------------------------
# incremental range / boundary tracking


@njit(cache=True)
def _boundary_walk(dirs, skeys, start_key, checkpoints, table_keys, table_vals):
    """Walk along direction indices, maintaining |R_k| and |dR_k|.

    Values in the table are the number of range neighbours of each range
    point; a point is on the boundary iff that number is below 2d.
    Returns (range sizes, boundary sizes) at the requested checkpoints.
    """
    nd = skeys.size
    ncp = checkpoints.size
    rsz = np.zeros(ncp, dtype=np.int64)
    bsz = np.zeros(ncp, dtype=np.int64)
    cur = start_key
    n_range = 0
    n_bound = 0
    ci = 0
    n = dirs.size
    for k in range(n + 1):
        if k > 0:
            cur += skeys[dirs[k - 1]]
        slot = hs.ht_slot(table_keys, cur)
        if table_keys[slot] != cur:
            table_keys[slot] = cur
            cnt = 0
            for j in range(nd):
                q = cur + skeys[j]
                qs = hs.ht_slot(table_keys, q)
                if table_keys[qs] == q:
                    cnt += 1
                    table_vals[qs] += 1
                    if table_vals[qs] == nd:
                        n_bound -= 1
            table_vals[slot] = cnt
            n_range += 1
            if cnt < nd:
                n_bound += 1
        while ci < ncp and checkpoints[ci] == k:
            rsz[ci] = n_range
            bsz[ci] = n_bound
            ci += 1
    return rsz, bsz


def boundary_sizes(dirs: np.ndarray, d: int, checkpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|R_k| and |dR_k| at sorted checkpoint times for the walk with these direction indices."""
    cps = np.asarray(checkpoints, dtype=np.int64)
    if cps.size and (np.any(np.diff(cps) < 0) or cps[-1] > len(dirs) or cps[0] < 0):
        raise ValueError("checkpoints must be sorted within 0..n")
    keys, vals = hs.new_table(len(dirs) + 1)
    start = hs.encode(np.zeros((1, d), dtype=np.int64))[0]
    return _boundary_walk(np.asarray(dirs, dtype=np.int64), hs.step_keys(d), start, cps, keys, vals)


def trajectory_directions(traj: Trajectory) -> np.ndarray:
    """Direction indices (0..2d-1, order +e1,-e1,...) of the steps of a path."""
    st = traj.steps()
    axis = np.argmax(np.abs(st), axis=1)
    sign = st[np.arange(len(st)), axis]
    return (2 * axis + (sign < 0)).astype(np.int64)


def boundary_profile(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """|R_k| and |dR_k| for every k = 0..n of a trajectory starting anywhere."""
    dirs = trajectory_directions(traj)
    cps = np.arange(traj.n + 1, dtype=np.int64)
    keys, vals = hs.new_table(traj.n + 1)
    start = hs.encode(traj.points[:1])[0]
    return _boundary_walk(dirs, hs.step_keys(traj.d), start, cps, keys, vals)


# ---------------------------------------------------------------------------
# mean boundary growth


def psi(d: int, n: float) -> float:
    """Fluctuation scale of the mean boundary: sqrt(n), log n, or 1 by dimension."""
    if d == 3:
        return math.sqrt(n)
    if d == 4:
        return math.log(max(n, 2.0))
    return 1.0


@dataclass
class MeanBoundaryRow:
    n: int
    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    replicas: int


@dataclass
class MeanBoundaryTable:
    d: int
    quantity: str
    rows: list[MeanBoundaryRow]
    nu_hat: float
    correction: float  # coefficient a in m(n) = nu + a psi(n)/n
    residuals: list[float]
    exponent_hat: float | None  # free-exponent fit from three successive n (None otherwise)
    plateau_hat: float | None
    flags: list[str] = field(default_factory=list)


def _replica_sizes(stream: RngStream, d: int, cps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = int(cps[-1])
    dirs = stream.generator().integers(0, 2 * d, size=n, dtype=np.int64)
    return boundary_sizes(dirs, d, cps)


def estimate_mean_boundary(
    d: int,
    n_grid: Sequence[int],
    replicas: int,
    stream: RngStream,
    quantity: str = "boundary",
    z: float = 1.96,
    replicas_per_n: Sequence[int] | None = None,
) -> MeanBoundaryTable:
    """Sample means of |dR_n|/n (or |R_n|/n) over a grid of n.

    Replica j uses ``stream.replica(j)`` and contributes the prefixes of one
    walk of length max(n_grid).  ``replicas_per_n`` lets smaller n use more
    replicas (each n then averages the first replicas_per_n[i] walks of a
    pool whose walks are cut at the largest n they serve).
    """
    check_dim(d)
    if quantity not in ("boundary", "range"):
        raise ValueError("quantity must be 'boundary' or 'range'")
    grid = np.array(sorted(int(x) for x in n_grid), dtype=np.int64)
    counts = np.array(replicas_per_n if replicas_per_n is not None else [replicas] * len(grid), dtype=np.int64)
    flags = []
    if counts.min() < 30:
        flags.append("insufficient replicas (< 30)")
    col = 1 if quantity == "boundary" else 0
    sums = np.zeros(len(grid))
    sq = np.zeros(len(grid))
    for j in range(int(counts.max())):
        serve = np.nonzero(counts > j)[0]
        cps = grid[: serve.max() + 1]
        sizes = _replica_sizes(stream.replica(j), d, cps)[col]
        vals = sizes[serve] / grid[serve]
        sums[serve] += vals
        sq[serve] += vals**2
    rows = []
    for i, n in enumerate(grid):
        m = sums[i] / counts[i]
        var = max(sq[i] / counts[i] - m * m, 0.0) * counts[i] / max(counts[i] - 1, 1)
        se = math.sqrt(var / counts[i])
        rows.append(MeanBoundaryRow(int(n), m, se, m - z * se, m + z * se, int(counts[i])))
    means = np.array([r.mean for r in rows])
    ses = np.array([max(r.stderr, 1e-15) for r in rows])
    x = np.array([psi(d, n) / n for n in grid])
    if len(grid) >= 2:
        A = np.stack([np.ones_like(x), x], axis=1) / ses[:, None]
        coef, *_ = np.linalg.lstsq(A, means / ses, rcond=None)
        nu, a = float(coef[0]), float(coef[1])
    else:
        nu, a = float(means[0]), 0.0
    resid = list(map(float, means - (nu + a * x)))
    expo = plateau = None
    if len(grid) >= 3:
        expo, plateau = successive_difference_fit(grid[-3:], means[-3:])
    return MeanBoundaryTable(d, quantity, rows, nu, a, resid, expo, plateau, flags)


def successive_difference_fit(ns: Sequence[int], means: Sequence[float]) -> tuple[float | None, float | None]:
    """Fit m(n) = nu + a n^(-b) through three points with a constant ratio n_{i+1}/n_i.

    The exponent comes from the ratio of successive differences, so no plateau
    value is assumed.  Returns (b, nu) or (None, None) if the differences do not
    have a common sign.
    """
    n1, n2, n3 = (float(v) for v in ns)
    m1, m2, m3 = (float(v) for v in means)
    q = n2 / n1
    if abs(n3 / n2 - q) > 1e-9 * q:
        raise ValueError("n grid must be geometric")
    d1, d2 = m1 - m2, m2 - m3
    if d1 * d2 <= 0:
        return None, None
    b = math.log(d1 / d2) / math.log(q)
    nu = m3 - d2 / (q**b - 1.0) if b > 0 else None
    return b, nu
