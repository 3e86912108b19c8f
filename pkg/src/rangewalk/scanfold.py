"""Rolling-ball scan, greedy well-separated centres, the G/H events, the folding
functional xi_n(T) and the exact slicing decomposition of |dR_n|."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from rangewalk import _hashset as hs
from rangewalk.geometry import dilate, inner_boundary, range_of, trajectory_directions
from rangewalk.green import RestrictedGreenTable
from rangewalk.lattice import PointSet, Trajectory, ball_offsets, unit_steps
from rangewalk.polymer import confined_strategy_cost


# ---------------------------------------------------------------------------
# rolling scan


def _shift_offsets(d: int, r: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """For each unit step e: offsets entering (B minus (B - e)) and leaving ((B - e) minus B)."""
    ball = ball_offsets(d, r)
    bset = set(map(tuple, ball.tolist()))
    enter, leave = [], []
    for e in unit_steps(d):
        shifted = set(map(tuple, (ball - e).tolist()))
        enter.append(np.array(sorted(bset - shifted), dtype=np.int64).reshape(-1, d))
        leave.append(np.array(sorted(shifted - bset), dtype=np.int64).reshape(-1, d))
    return enter, leave


def _offset_keys(offsets: np.ndarray, d: int) -> np.ndarray:
    """Key differences for offsets: key(x + o) = key(x) + sum o_i 2^(bits i)."""
    bits = hs.key_bits(d)
    w = np.array([1 << (bits * i) for i in range(d)], dtype=np.int64)
    return (np.asarray(offsets, dtype=np.int64) * w).sum(axis=1).astype(np.int64)


@njit(cache=True)
def _window_counts(keys, dirs, v_key, enter_keys, enter_ptr, leave_keys, leave_ptr, ball_keys,
                   self_in, recount_every, occ_keys, occ_vals):
    """W_k = l_k(S_k + v + B) for k = 0..n, updated by the window's symmetric difference.

    Every ``recount_every`` steps (when positive) the window is recounted in
    full; a mismatch returns -1 in the corresponding slot of ``bad``.
    """
    n = keys.size - 1
    W = np.zeros(n + 1, dtype=np.int64)
    bad = -1
    # time 0
    hs.ht_add(occ_keys, occ_vals, keys[0], 1)
    W[0] = 1 if self_in else 0
    for k in range(1, n + 1):
        c = keys[k] + v_key
        dk = dirs[k - 1]
        w = W[k - 1]
        for j in range(leave_ptr[dk], leave_ptr[dk + 1]):
            w -= hs.ht_get(occ_keys, occ_vals, c + leave_keys[j], 0)
        for j in range(enter_ptr[dk], enter_ptr[dk + 1]):
            w += hs.ht_get(occ_keys, occ_vals, c + enter_keys[j], 0)
        hs.ht_add(occ_keys, occ_vals, keys[k], 1)
        if self_in:
            w += 1
        W[k] = w
        if recount_every > 0 and k % recount_every == 0:
            full = 0
            for j in range(ball_keys.size):
                full += hs.ht_get(occ_keys, occ_vals, c + ball_keys[j], 0)
            if full != w and bad < 0:
                bad = k
    return W, bad


def window_counts(traj: Trajectory, v, r: float, n: int | None = None, recount_every: int = 0) -> np.ndarray:
    """l_k(S_k + B(v, r)) for k = 0..n."""
    n = traj.n if n is None else n
    d = traj.d
    v = np.asarray(v, dtype=np.int64).reshape(d)
    sub = traj.prefix(n)
    keys = sub.keys()
    dirs = trajectory_directions(sub) if n > 0 else np.zeros(0, dtype=np.int64)
    enter, leave = _shift_offsets(d, r)
    ek = np.concatenate([_offset_keys(e, d) for e in enter])
    lk = np.concatenate([_offset_keys(e, d) for e in leave])
    eptr = np.cumsum([0] + [len(e) for e in enter]).astype(np.int64)
    lptr = np.cumsum([0] + [len(e) for e in leave]).astype(np.int64)
    bk = _offset_keys(ball_offsets(d, r), d)
    vkey = int(_offset_keys(v[None, :], d)[0])
    self_in = float(np.sum(v.astype(float) ** 2)) <= r * r + 1e-9
    okeys, ovals = hs.new_table(n + 1)
    W, bad = _window_counts(keys, dirs, vkey, ek, eptr, lk, lptr, bk, self_in, recount_every, okeys, ovals)
    if bad >= 0:
        raise AssertionError(f"rolling window self-check failed at step {bad}")
    return W


def window_counts_naive(traj: Trajectory, v, r: float, n: int | None = None) -> np.ndarray:
    """O(n |B|) recount of l_k(S_k + B(v, r)) used as a reference."""
    n = traj.n if n is None else n
    d = traj.d
    off = ball_offsets(d, r) + np.asarray(v, dtype=np.int64)
    occ: dict = {}
    out = np.zeros(n + 1, dtype=np.int64)
    pts = traj.points[: n + 1].tolist()
    for k in range(n + 1):
        p = tuple(pts[k])
        occ[p] = occ.get(p, 0) + 1
        s = 0
        for o in off.tolist():
            s += occ.get(tuple(a + b for a, b in zip(p, o)), 0)
        out[k] = s
    return out


@dataclass
class ScanResult:
    v: tuple
    r: float
    t: float
    n: int
    times: np.ndarray  # sorted K_n

    @property
    def count(self) -> int:
        return int(self.times.size)


def rolling_scan(traj: Trajectory, v, r: float, t: float, n: int | None = None, recount_every: int = 0) -> ScanResult:
    """K_n(B(v,r), t) = {k in 1..n : l_k(S_k + B(v,r)) > t}."""
    n = traj.n if n is None else n
    if r < 1 or t < 0 or n > traj.n:
        raise ValueError("need r >= 1, t >= 0 and n within the trajectory")
    W = window_counts(traj, v, r, n, recount_every)
    times = np.nonzero(W[1:] > t)[0] + 1
    return ScanResult(tuple(int(c) for c in np.ravel(v)), r, t, n, times)


# ---------------------------------------------------------------------------
# greedy centres


@dataclass
class CenterFamily:
    r: float
    centres: np.ndarray  # (m, d)
    times: list[int] = field(default_factory=list)
    precondition: bool = False

    def __len__(self) -> int:
        return len(self.centres)

    def admissible(self) -> bool:
        return separated(self.centres, self.r)


def separated(centres: np.ndarray, r: float) -> bool:
    """Pairwise Euclidean distance at least 4r."""
    c = np.asarray(centres, dtype=float)
    if len(c) < 2:
        return True
    diff = c[:, None, :] - c[None, :, :]
    dist2 = (diff**2).sum(axis=2)
    iu = np.triu_indices(len(c), 1)
    return bool(np.all(dist2[iu] >= (4 * r) ** 2 - 1e-9))


def _near_any(points: np.ndarray, centres: np.ndarray, radius: float) -> np.ndarray:
    """Mask of points within Euclidean distance ``radius`` of some centre."""
    out = np.zeros(len(points), dtype=bool)
    r2 = radius * radius + 1e-9
    for c in np.asarray(centres):
        out |= ((points - c) ** 2).sum(axis=1) <= r2
    return out


def ball_union_occupation(traj: Trajectory, centres, radius: float, n: int) -> int:
    """l_n(B(C, radius)) counting times 0..n."""
    if len(centres) == 0:
        return 0
    return int(_near_any(traj.points[: n + 1], np.asarray(centres), radius).sum())


def greedy_centers(traj: Trajectory, v, r: float, t: float, L: float, n: int | None = None) -> CenterFamily:
    """Well-separated centres built along the trajectory in time order.

    The first centre is the position at the first time k >= 0 with
    l_k(S_k + B(v,r)) > t.  Further centres are taken at the next such time
    outside B(C, 4r), until l_n(B(C, 4r)) >= L or every scan time is covered.
    """
    n = traj.n if n is None else n
    W = window_counts(traj, v, r, n)
    pts = traj.points[: n + 1]
    over = W > t
    K = np.nonzero(over[1:])[0] + 1
    pre = len(K) > L
    first = np.nonzero(over)[0]
    d = traj.d
    if len(first) == 0:
        return CenterFamily(r, np.zeros((0, d), dtype=np.int64), [], pre)
    k_prev = int(first[0])
    centres = [pts[k_prev].copy()]
    times = [k_prev]
    covered = _near_any(pts, pts[k_prev][None, :], 4 * r)
    if np.all(covered[K]):
        return CenterFamily(r, np.array(centres), times, pre)
    while True:
        if covered.sum() >= L:
            break
        cand = np.nonzero(over & ~covered)[0]
        cand = cand[cand > k_prev]
        if len(cand) == 0:
            break
        k_prev = int(cand[0])
        centres.append(pts[k_prev].copy())
        times.append(k_prev)
        covered |= _near_any(pts, pts[k_prev][None, :], 4 * r)
    return CenterFamily(r, np.array(centres), times, pre)


@dataclass
class InclusionCheck:
    admissible: bool
    occupation_ok: bool  # l_n(B(x+v, r)) >= t for all centres
    coverage_ok: bool  # l_n(B(C, 4r)) >= L
    min_occupation: int
    coverage: int

    @property
    def ok(self) -> bool:
        return self.admissible and self.occupation_ok and self.coverage_ok


def verify_inclusion(traj: Trajectory, fam: CenterFamily, v, t: float, L: float, n: int | None = None) -> InclusionCheck:
    """Recount both conclusions for a greedy family directly from the path."""
    n = traj.n if n is None else n
    pts = traj.points[: n + 1]
    v = np.asarray(v, dtype=np.int64)
    occs = [int(_near_any(pts, (c + v)[None, :], fam.r).sum()) for c in fam.centres]
    mn = min(occs) if occs else 0
    cov = ball_union_occupation(traj, fam.centres, 4 * fam.r, n)
    return InclusionCheck(fam.admissible(), all(o >= t for o in occs), cov >= L, mn, cov)


# ---------------------------------------------------------------------------
# G and H events


@njit(cache=True)
def _ball_occupation_at(keys, query_keys, ball_keys, occ_keys, occ_vals):
    for k in range(keys.size):
        hs.ht_add(occ_keys, occ_vals, keys[k], 1)
    out = np.zeros(query_keys.size, dtype=np.int64)
    for q in range(query_keys.size):
        s = 0
        for j in range(ball_keys.size):
            s += hs.ht_get(occ_keys, occ_vals, query_keys[q] + ball_keys[j], 0)
        out[q] = s
    return out


def ball_occupations_at(traj: Trajectory, query: np.ndarray, r: float, n: int | None = None) -> np.ndarray:
    """l_n(B(x, r)) for each row x of ``query``."""
    n = traj.n if n is None else n
    d = traj.d
    keys = traj.prefix(n).keys()
    okeys, ovals = hs.new_table(n + 1)
    q = hs.encode(np.asarray(query, dtype=np.int64).reshape(-1, d))
    return _ball_occupation_at(keys, q, _offset_keys(ball_offsets(d, r), d), okeys, ovals)


@dataclass
class EventWitness:
    kind: str  # "G" or "H"
    m: int
    centres: np.ndarray | None  # None means undetermined
    values: list[int] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.centres is not None


def _far_centres(traj: Trajectory, existing: np.ndarray, r: float, count: int) -> np.ndarray:
    """``count`` centres far from the path and from each other (admissible padding)."""
    d = traj.d
    span = np.abs(traj.points).max() + 8 * r + 8
    out = []
    base = np.zeros(d, dtype=np.int64)
    for j in range(count):
        c = base.copy()
        c[0] = int(span + 8 * r * (j + 1))
        out.append(c)
    pad = np.array(out, dtype=np.int64).reshape(-1, d)
    return np.concatenate([np.asarray(existing, dtype=np.int64).reshape(-1, d), pad])


def detect_G_event(traj: Trajectory, r: float, t: float, m: int, n: int | None = None,
                   seeds: np.ndarray | None = None) -> EventWitness:
    """Constructive search for m admissible centres each with l_n(B(x, r)) > t.

    Candidates are the seeds (if any) followed by the path positions in time
    order; a candidate is kept when it is far enough from those already kept.
    Returning no witness does not disprove the event.
    """
    if m < 1:
        raise ValueError("m must be positive")
    n = traj.n if n is None else n
    d = traj.d
    cands = [] if seeds is None else [np.asarray(seeds, dtype=np.int64).reshape(-1, d)]
    _, first_idx = np.unique(traj.points[: n + 1], axis=0, return_index=True)
    cands.append(traj.points[np.sort(first_idx)])
    cands = np.concatenate(cands)
    occ = ball_occupations_at(traj, cands, r, n)
    chosen, vals = [], []
    for c, o in zip(cands, occ):
        if o <= t:
            continue
        if chosen and np.any(((np.asarray(chosen) - c) ** 2).sum(axis=1) < (4 * r) ** 2 - 1e-9):
            continue
        chosen.append(c)
        vals.append(int(o))
        if len(chosen) == m:
            w = np.array(chosen)
            assert separated(w, r)
            if m > 1:
                assert separated(w[:-1], r) and all(x > t for x in vals[:-1])
            return EventWitness("G", m, w, vals)
    return EventWitness("G", m, None)


def detect_H_event(traj: Trajectory, r: float, L: float, m: int, n: int | None = None,
                   seeds: np.ndarray | None = None) -> EventWitness:
    """Constructive search for m admissible centres with l_n(B(C, 4r)) >= L.

    Tries the seed family (cut to its first m centres, or padded with centres
    far from the path), then a greedy time-ordered cover of the path.
    """
    if m < 1:
        raise ValueError("m must be positive")
    n = traj.n if n is None else n
    d = traj.d
    if L > n + 1:
        return EventWitness("H", m, None)
    tries = []
    if seeds is not None and len(seeds):
        s = np.asarray(seeds, dtype=np.int64).reshape(-1, d)
        tries.append(s[:m])
    # greedy time-ordered cover of the path
    pts = traj.points[: n + 1]
    chosen = []
    covered = np.zeros(len(pts), dtype=bool)
    for k in range(len(pts)):
        if len(chosen) == m:
            break
        if covered[k]:
            continue
        c = pts[k]
        if chosen and np.any(((np.asarray(chosen) - c) ** 2).sum(axis=1) < (4 * r) ** 2 - 1e-9):
            continue
        chosen.append(c.copy())
        covered |= _near_any(pts, c[None, :], 4 * r)
    if chosen:
        tries.append(np.array(chosen))
    for fam in tries:
        if not separated(fam, r):
            continue
        full = _far_centres(traj, fam, r, m - len(fam)) if len(fam) < m else fam
        if not separated(full, r):
            continue
        val = ball_union_occupation(traj, full, 4 * r, n)
        if val >= L:
            return EventWitness("H", m, full, [val])
    return EventWitness("H", m, None)


@dataclass
class NoRandomCheck:
    scan_count: int
    family_size: int
    per_m: list[tuple[int, bool, bool]]  # (m, G found, H found)

    @property
    def ok(self) -> bool:
        return all(g or h for _, g, h in self.per_m)


def check_no_random(traj: Trajectory, v, r: float, t: float, L: float, n: int | None = None) -> NoRandomCheck:
    """When |K_n| > L, each m up to the greedy family size has a G or H witness."""
    n = traj.n if n is None else n
    scan = rolling_scan(traj, v, r, t, n)
    fam = greedy_centers(traj, v, r, t, L, n)
    v = np.asarray(v, dtype=np.int64)
    per = []
    if scan.count > L:
        shifted = fam.centres + v if len(fam) else None
        for m in range(1, max(len(fam), 1) + 1):
            g = detect_G_event(traj, r, t, m, n, seeds=shifted)
            h = detect_H_event(traj, r, L, m, n, seeds=fam.centres)
            per.append((m, g.found, h.found))
    return NoRandomCheck(scan.count, len(fam), per)


# ---------------------------------------------------------------------------
# folding functional


@njit(cache=True)
def _xi_incremental(keys, skeys, dil_keys, off_keys, off_vals, set_keys, rng_keys):
    """sum_{k=1}^n sum_{z in R_k^{++}} G_T(z - S_k), maintaining R_k^{++} in a hash set."""
    n = keys.size - 1
    partial = np.zeros(n + 1)
    total = 0.0
    for k in range(n + 1):
        x = keys[k]
        s = hs.ht_slot(rng_keys, x)
        if rng_keys[s] != x:
            rng_keys[s] = x
            for j in range(dil_keys.size):
                y = x + dil_keys[j]
                t = hs.ht_slot(set_keys, y)
                if set_keys[t] != y:
                    set_keys[t] = y
        if k >= 1:
            acc = 0.0
            for j in range(off_keys.size):
                y = x + off_keys[j]
                if set_keys[hs.ht_slot(set_keys, y)] == y:
                    acc += off_vals[j]
            total += acc
        partial[k] = total
    return partial


def double_dilation_offsets(d: int) -> np.ndarray:
    """Offsets with l1 norm at most 2: the ++ neighbourhood of a point."""
    ax = np.arange(-2, 3)
    grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return grid[np.abs(grid).sum(axis=1) <= 2]


@dataclass
class XiValue:
    n: int
    T: int
    value: float
    error_bound: float
    partial: np.ndarray  # T * xi_k(T) for k = 0..n (cumulative sums before dividing by T)


def xi_fold(traj: Trajectory, n: int, T: int, table: RestrictedGreenTable, threshold: float = 0.0) -> XiValue:
    """xi_n(T) = (1/T) sum_{k=1}^n sum_{z in R_k^{++}} G_T(z - S_k).

    Offsets with G_T below ``threshold`` are skipped; their total mass, times
    n/T, plus the table's own certificate, bounds the error.
    """
    if table.T != T:
        raise ValueError(f"table horizon {table.T} does not match T = {T}")
    if n > traj.n:
        raise ValueError("n exceeds trajectory length")
    d = traj.d
    vals = table.values
    R = table.R
    idx = np.argwhere(vals > threshold)
    offs = idx - R
    ov = vals[tuple(idx.T)]
    dropped = float(vals[vals <= threshold].sum())
    keys = traj.prefix(n).keys()
    setk, _ = hs.new_table(len(keys) * len(double_dilation_offsets(d)))
    rngk, _ = hs.new_table(len(keys))
    partial = _xi_incremental(keys, hs.step_keys(d), _offset_keys(double_dilation_offsets(d), d),
                              _offset_keys(offs, d), ov, setk, rngk)
    size_pp = int(np.sum(setk != hs.EMPTY))
    err = n / T * dropped + n / T * table.escape_time * min(size_pp, len(ov))
    return XiValue(n, T, float(partial[-1] / T) if n >= 1 else 0.0, err, partial)


# ---------------------------------------------------------------------------
# slicing


@dataclass
class SlicingTerms:
    i: int
    T: int
    n: int
    K: int  # floor(n/T) - 2
    blocks: list[tuple[int, int]]
    U: list[int]
    X: list[int]  # X_1..X_K (cumulative)
    boundary: int
    prefix_boundary: int
    tail_boundary: int
    remainder: int
    uncovered: int
    holds: bool
    remainder_within_bound: bool
    xi: float | None = None


def slicing_terms(traj: Trajectory, i: int, T: int, n: int | None = None) -> SlicingTerms:
    """Exact block boundaries, cross terms and remainder for one offset i.

    Blocks are R(i+jT+1, i+(j+1)T) for j = 0..K with K = floor(n/T) - 2 (one
    block, cut at n, when K < 0).  The prefix R(0, i) is merged with the first
    block and the trailing piece is attached last; the remainder collects
    exactly what superadditivity charges for those two junctions.
    """
    n = traj.n if n is None else n
    if not (-1 <= i <= T - 2):
        raise ValueError(f"offset i={i} outside -1..T-2")
    if T < 1 or T > n:
        raise ValueError("need 1 <= T <= n")
    K = n // T - 2
    nb = max(K, 0) + 1
    blocks = []
    for j in range(nb):
        a, b = i + j * T + 1, min(i + (j + 1) * T, n)
        blocks.append((a, b))
    sets = [range_of(traj, a, b) for a, b in blocks]
    dil = [dilate(s) for s in sets]
    U = [len(inner_boundary(s)) for s in sets]
    d = traj.d
    # running R_{i+jT} and its dilation
    prefix = range_of(traj, 0, i) if i >= 0 else PointSet(d)
    run = prefix | sets[0]
    run_dil = dilate(run)
    X, acc = [], 0
    for j in range(1, nb):
        acc += 2 * len(run_dil & dil[j])
        X.append(acc)
        run = run | sets[j]
        run_dil = run_dil | dil[j]
    end = blocks[-1][1]
    tail = range_of(traj, end + 1, n) if end < n else PointSet(d)
    pb = len(inner_boundary(prefix))
    tb = len(inner_boundary(tail))
    rem = 2 * len(dil[0] & dilate(prefix)) - pb + 2 * len(dilate(tail) & run_dil) - tb
    bound = len(inner_boundary(range_of(traj, 0, n)))
    xk = X[-1] if X else 0
    holds = bound >= sum(U) - xk - rem
    uncovered = (i + 1) + (n - end)
    within = rem <= 2 * (2 * d + 1) * uncovered
    return SlicingTerms(i, T, n, K, blocks, U, X, bound, pb, tb, rem, uncovered, holds, within)


# ---------------------------------------------------------------------------
# deviation scaling


@dataclass
class DeviationPoint:
    n: int
    eps: float
    scale: float  # eps^{2/3} n^{1/3} (d=3) or (eps n)^{1-2/d}
    cost: float  # -log of the estimated probability
    cost_stderr: float
    params: dict = field(default_factory=dict)


@dataclass
class DeviationFit:
    d: int
    points: list[DeviationPoint]
    slope: float
    intercept: float
    r2: float
    half_slopes: tuple[float, float]
    unreachable: list[tuple[int, float, str]] = field(default_factory=list)


def deviation_scale(d: int, n: int, eps: float) -> float:
    if d == 3:
        return eps ** (2.0 / 3.0) * n ** (1.0 / 3.0)
    if d == 4:
        return math.sqrt(eps * n)
    return (eps * n) ** (1.0 - 2.0 / d)


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(((y - (a * x + b)) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return float(a), float(b), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def deviation_scan_experiment(d: int, n_grid: Sequence[int], eps_grid: Sequence[float], replicas: int,
                              stream, mu: dict | None = None, nu: float | None = None,
                              strategy_grid: Sequence[float] | None = None) -> DeviationFit:
    """Cost of the confinement strategy for {|dR_n| - mean <= -eps n} across (n, eps).

    For each point the cheapest strategy in a small family is kept; its cost is
    -log of an unbiased importance-sampling estimate of the joint probability of
    confinement and the boundary deficit.
    """
    pts, unreachable = [], []
    for a, n in enumerate(n_grid):
        for b, eps in enumerate(eps_grid):
            if nu is not None and eps >= nu:
                unreachable.append((n, eps, "eps above the boundary growth constant: probability 0"))
                continue
            res = confined_strategy_cost(d, n, eps, replicas, stream.child(1000 * a + b),
                                         mu=None if mu is None else mu.get(n), strategy_grid=strategy_grid)
            if res is None:
                unreachable.append((n, eps, "no strategy reached the deficit at desk scale"))
                continue
            cost, se, params = res
            pts.append(DeviationPoint(n, eps, deviation_scale(d, n, eps), cost, se, params))
    x = [p.scale for p in pts]
    y = [p.cost for p in pts]
    slope, icpt, r2 = linear_fit(x, y) if len(pts) >= 2 else (float("nan"),) * 3
    order = np.argsort(x)
    half = len(order) // 2
    hs_ = (float("nan"), float("nan"))
    if half >= 2:
        lo = [pts[j] for j in order[:half]]
        hi = [pts[j] for j in order[half:]]
        hs_ = (linear_fit([p.scale for p in lo], [p.cost for p in lo])[0],
               linear_fit([p.scale for p in hi], [p.cost for p in hi])[0])
    return DeviationFit(d, pts, slope, icpt, r2, hs_, unreachable)
