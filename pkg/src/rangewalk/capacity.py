"""Capacity of finite lattice sets: Monte Carlo and Dirichlet brackets, the index I_d,
and occupation of families of balls."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from rangewalk import _hashset as hs
from rangewalk.green import DEFAULT_MEMORY_CAP, ResourceCapError, green_asymptotic, green_full
from rangewalk.lattice import PointSet, RngStream, ball_offsets, check_dim, unit_steps


@dataclass
class CapacityBracket:
    set_id: str
    volume: int
    lower: float
    upper: float
    method: str
    params: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def mid(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def overlaps(self, other: "CapacityBracket") -> bool:
        return self.lower <= other.upper and other.lower <= self.upper

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@lru_cache(maxsize=None)
def green_origin_bracket(d: int) -> tuple[float, float]:
    for tol in (1e-4, 1e-3, 1e-2):
        try:
            est = green_full(d, (0,) * d, tol)
            return float(est.value), float(est.upper)
        except ResourceCapError:
            continue
    raise ResourceCapError(f"cannot bracket G(0) in d={d} under the memory cap")


def green_upper_many(d: int, dist: np.ndarray) -> np.ndarray:
    """Vectorised far-field upper bound for G at the given Euclidean distances."""
    dist = np.asarray(dist, dtype=float)
    out = np.empty_like(dist)
    near = dist < 1.0
    out[near] = green_origin_bracket(d)[1]
    r = dist[~near]
    out[~near] = green_asymptotic(d, 1.0) / r ** (d - 2) * (1.0 + 2.0 / r**2) + (1.0 + r) ** (-d)
    return np.minimum(out, green_origin_bracket(d)[1])


def green_lower_many(d: int, dist: np.ndarray) -> np.ndarray:
    """Vectorised far-field lower bound for G (zero inside distance 2)."""
    dist = np.asarray(dist, dtype=float)
    out = np.zeros_like(dist)
    far = dist >= 2.0
    r = dist[far]
    out[far] = np.maximum(green_asymptotic(d, 1.0) / r ** (d - 2) * (1.0 - 2.0 / r**2) - (1.0 + r) ** (-d), 0.0)
    return out


# ---------------------------------------------------------------------------
# Monte Carlo


@njit(cache=True)
def _escape_walks(start_key, dirs, skeys, set_keys, final_keys):
    """For each row of ``dirs`` walk from start; flag walks that avoid the set at times 1..T."""
    M, T = dirs.shape
    escaped = np.zeros(M, dtype=np.bool_)
    for m in range(M):
        cur = start_key
        hit = False
        for k in range(T):
            cur += skeys[dirs[m, k]]
            if hs.ht_contains(set_keys, cur):
                hit = True
                break
        escaped[m] = not hit
        final_keys[m] = cur
    return escaped


def capacity_mc(
    lam: PointSet,
    T: int | None = None,
    M: int = 1000,
    stream: RngStream | None = None,
    z: float = 1.96,
    set_id: str = "",
) -> CapacityBracket:
    """Bracket cap(L) from escape frequencies of M walks of T steps per start point.

    Walks that have not returned by T may still come back; the chance is at
    most sum_y G(S_T - y)/G(0), averaged over the same walks and subtracted
    from the lower end.
    """
    if len(lam) == 0:
        raise ValueError("capacity of the empty set is not estimated")
    d = lam.d
    check_dim(d)
    stream = stream or RngStream(0)
    if T is None:
        T = int(max(lam.diameter() ** 2, 1000))
    if M < 100:
        raise ValueError("need at least 100 walks per start point")
    pts = lam.to_array()
    keys = hs.encode(pts)
    table, _ = hs.new_table(len(keys))
    for k in keys:
        table[hs.ht_slot(table, k)] = k
    skeys = hs.step_keys(d)
    g0_low = green_origin_bracket(d)[0]
    rng = stream.generator()
    phat = np.zeros(len(pts))
    bias = np.zeros(len(pts))
    final = np.zeros(M, dtype=np.int64)
    for i, start in enumerate(keys):
        dirs = rng.integers(0, 2 * d, size=(M, T), dtype=np.int8)
        esc = _escape_walks(start, dirs, skeys, table, final)
        phat[i] = esc.mean()
        if esc.any():
            fin = hs.decode(final[esc], d)
            dist = np.sqrt(((fin[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
            ret = np.minimum(1.0, green_upper_many(d, dist).sum(axis=1) / g0_low)
            bias[i] = ret.sum() / M
    est = float(phat.sum())
    se = float(np.sqrt(np.sum(phat * (1 - phat) / M)))
    # a zero-variance estimate still gets one walk's worth of resolution
    se = max(se, math.sqrt(len(pts)) / M)
    upper = min(est + z * se, float(len(pts)))
    lower = max(est - z * se - float(bias.sum()), 0.0)
    return CapacityBracket(set_id, len(pts), lower, upper, "monte-carlo",
                           {"T": T, "M": M, "estimate": est, "stderr": se, "bias": float(bias.sum())})


# ---------------------------------------------------------------------------
# Dirichlet relaxation


@njit(cache=True)
def _red_black(h, red, black, strides, omega, tol, max_sweeps):
    nd = strides.size
    inv = 1.0 / (2 * nd)
    sweeps = 0
    res = 1.0
    while sweeps < max_sweeps:
        for colour in range(2):
            idxs = red if colour == 0 else black
            for ii in range(idxs.size):
                i = idxs[ii]
                acc = 0.0
                for j in range(nd):
                    acc += h[i + strides[j]] + h[i - strides[j]]
                h[i] += omega * (acc * inv - h[i])
        sweeps += 1
        if sweeps % 10 == 0 or sweeps == max_sweeps:
            res = 0.0
            for colour in range(2):
                idxs = red if colour == 0 else black
                for ii in range(idxs.size):
                    i = idxs[ii]
                    acc = 0.0
                    for j in range(nd):
                        acc += h[i + strides[j]] + h[i - strides[j]]
                    r = abs(acc * inv - h[i])
                    if r > res:
                        res = r
            if res < tol:
                break
    return sweeps, res


@dataclass
class DirichletSolution:
    bracket: CapacityBracket
    escape: np.ndarray  # per-point escape-to-radius-R probabilities (upper bounds)
    sweeps: int
    residual: float


def capacity_dirichlet(
    lam: PointSet,
    R: int | None = None,
    tol: float = 1e-10,
    max_sweeps: int = 200000,
    set_id: str = "",
    check_radius: bool = True,
    memory_cap: int = DEFAULT_MEMORY_CAP,
) -> CapacityBracket:
    return dirichlet_solve(lam, R, tol, max_sweeps, set_id, check_radius, memory_cap).bracket


def dirichlet_solve(
    lam: PointSet,
    R: int | None = None,
    tol: float = 1e-10,
    max_sweeps: int = 200000,
    set_id: str = "",
    check_radius: bool = True,
    memory_cap: int = DEFAULT_MEMORY_CAP,
) -> DirichletSolution:
    """Escape probabilities to distance R by red-black over-relaxation.

    h(y) = P_y[leave B(0,R) before hitting L] is harmonic off L inside the
    ball, 0 on L and 1 outside.  The escape probability from x in L is the
    average of h over its neighbours, which bounds the true escape from above;
    the lower end multiplies by one minus the largest return chance from
    outside the ball, bounded through the Green's function.
    """
    if len(lam) == 0:
        raise ValueError("capacity of the empty set is not computed")
    d = lam.d
    check_dim(d)
    rad = lam.radius()
    if R is None:
        R = int(max(4 * math.ceil(rad), 8))
    if check_radius and R < 4 * rad:
        raise ValueError(f"truncation radius {R} below 4 x set radius {rad:.2f}")
    pts = lam.to_array()
    n1 = 2 * R + 3  # box [-R-1, R+1]^d
    # about a dozen full-grid temporaries of 8 bytes while setting up
    if 96 * n1**d > memory_cap:
        raise ResourceCapError(f"Dirichlet grid with R={R} needs about {96 * n1**d} bytes > cap {memory_cap}")
    axis = np.arange(-R - 1, R + 2)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    sq = sum(g.astype(np.int64) ** 2 for g in grids)
    inside = sq <= R * R
    in_set = np.zeros(inside.shape, dtype=bool)
    if np.any(np.abs(pts) > R):
        raise ValueError("set sticks out of the truncation ball")
    in_set[tuple((pts + R + 1).T)] = True
    # initial guess: harmonic profile of a ball of radius rad
    r = np.sqrt(sq.astype(float))
    a = max(rad, 0.5)
    h0 = np.clip((1.0 - (a / np.maximum(r, a)) ** (d - 2)) / (1.0 - (a / R) ** (d - 2)), 0.0, 1.0)
    h = np.where(inside, h0, 1.0)
    h[in_set] = 0.0
    parity = sum(grids) % 2
    free = inside & ~in_set
    # C-order flattening: last axis is fastest
    strides = np.array([n1 ** (d - 1 - i) for i in range(d)], dtype=np.int64)
    flat = h.ravel().copy()
    red = np.flatnonzero((free & (parity == 0)).ravel()).astype(np.int64)
    black = np.flatnonzero((free & (parity == 1)).ravel()).astype(np.int64)
    omega = 2.0 / (1.0 + math.sin(math.pi / (2 * R + 2)))
    sweeps, res = _red_black(flat, red, black, strides, omega, tol, max_sweeps)
    if res >= tol:
        raise RuntimeError(f"relaxation did not converge: residual {res:.3e} after {sweeps} sweeps")
    hh = flat.reshape(h.shape)
    idx = pts + R + 1
    esc = np.zeros(len(pts))
    for s in unit_steps(d):
        nb = idx + s
        esc += hh[tuple(nb.T)] * ~in_set[tuple(nb.T)]
    esc /= 2 * d
    # solver error: residual times the mean exit time of the ball, at most (R+1)^2
    solver_err = res * (R + 1) ** 2
    e_hi = np.minimum(esc + solver_err, 1.0)
    e_lo = np.maximum(esc - solver_err, 0.0)
    # after leaving the ball at some w with R < |w| <= R + 1 the walk returns
    # with probability sum_y G(w - y) e(y), e the true escape probabilities
    norms = np.sqrt((pts**2).sum(axis=1))
    g_far_up = green_upper_many(d, R - norms)
    g_far_lo = green_lower_many(d, R + 1 + norms)
    up_true, lo_true = e_hi.copy(), np.zeros_like(e_hi)
    for _ in range(50):
        q_max = min(float(np.sum(up_true * g_far_up)), 1.0)
        q_min = min(float(np.sum(lo_true * g_far_lo)), 1.0)
        new_lo = e_lo * (1.0 - q_max)
        new_up = e_hi * (1.0 - q_min)
        if np.allclose(new_lo, lo_true, atol=1e-14) and np.allclose(new_up, up_true, atol=1e-14):
            break
        lo_true, up_true = new_lo, new_up
    upper, lower = float(up_true.sum()), float(lo_true.sum())
    ret = q_max
    br = CapacityBracket(set_id, len(pts), lower, min(upper, float(len(pts))), "dirichlet",
                         {"R": R, "sweeps": int(sweeps), "residual": float(res), "return_bound": ret})
    return DirichletSolution(br, esc, int(sweeps), float(res))


# ---------------------------------------------------------------------------
# index


@dataclass
class IndexReport:
    set_id: str
    volume: int
    lower: float
    upper: float
    capacity: CapacityBracket
    within_bounds: bool


def iso_index(lam: PointSet, method: str = "dirichlet", set_id: str = "", **kw) -> IndexReport:
    """I_d = cap / |L|^{1-2/d} as a bracket."""
    if method == "dirichlet":
        br = capacity_dirichlet(lam, set_id=set_id, **kw)
    elif method == "monte-carlo":
        br = capacity_mc(lam, set_id=set_id, **kw)
    else:
        raise ValueError(f"unknown method {method!r}")
    d = lam.d
    scale = len(lam) ** (1.0 - 2.0 / d)
    lo, up = br.lower / scale, br.upper / scale
    ok = lo > 0 and up <= len(lam) ** (2.0 / d) + 1e-12
    return IndexReport(set_id, len(lam), lo, up, br, ok)


def write_capacity_csv(path: str | Path, rows: Iterable[tuple[CapacityBracket, IndexReport | None]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set_id", "volume", "method", "lower", "upper", "index_lower", "index_upper"])
        for br, ix in rows:
            w.writerow([br.set_id, br.volume, br.method, f"{br.lower:.10g}", f"{br.upper:.10g}",
                        "" if ix is None else f"{ix.lower:.10g}", "" if ix is None else f"{ix.upper:.10g}"])


# ---------------------------------------------------------------------------
# families of balls


def ball_family(centres: Sequence[Sequence[int]], r: float) -> PointSet:
    """B(C, r): union of closed balls around the centres."""
    cs = np.asarray(centres, dtype=np.int64)
    off = ball_offsets(cs.shape[1], r)
    return PointSet.from_array((cs[:, None, :] + off[None, :, :]).reshape(-1, cs.shape[1]))


def in_family(centres: Sequence[Sequence[int]], r: float) -> bool:
    """True if the centres are pairwise at distance at least 4r."""
    cs = np.asarray(centres, dtype=float)
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            if np.linalg.norm(cs[i] - cs[j]) < 4 * r - 1e-12:
                return False
    return True


@njit(cache=True)
def _ball_occupations(dirs, start, centres, r2):
    """Occupation counts l_n(B(x, r)) for every centre along each walk (time 0 included)."""
    M, n = dirs.shape
    m, d = centres.shape
    out = np.zeros((M, m), dtype=np.int64)
    pos = np.empty(d, dtype=np.int64)
    for w in range(M):
        for i in range(d):
            pos[i] = start[i]
        for k in range(n + 1):
            if k > 0:
                s = dirs[w, k - 1]
                ax = s >> 1
                if s & 1:
                    pos[ax] -= 1
                else:
                    pos[ax] += 1
            for c in range(m):
                acc = 0
                for i in range(d):
                    diff = pos[i] - centres[c, i]
                    acc += diff * diff
                if acc <= r2:
                    out[w, c] += 1
    return out


def ball_occupations(stream: RngStream, d: int, n: int, centres, r: float, replicas: int,
                     start=None, chunk: int = 2000) -> np.ndarray:
    """(replicas, |C|) array of l_n(B(x, r)) for independent walks of length n."""
    cs = np.asarray(centres, dtype=np.int64)
    st = np.zeros(d, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
    r2 = r * r + 1e-9
    rows = []
    done = 0
    j = 0
    while done < replicas:
        b = min(chunk, replicas - done)
        dirs = stream.child(j).generator().integers(0, 2 * d, size=(b, n), dtype=np.int8)
        rows.append(_ball_occupations(dirs, st, cs, r2))
        done += b
        j += 1
    return np.concatenate(rows, axis=0)


@dataclass
class CapacityTailReport:
    family_size: int
    r: float
    t: float
    n: int
    volume: int
    capacity: CapacityBracket
    lhs: float  # empirical probability that every ball is occupied at least t times
    lhs_upper: float
    rhs: float  # C (|C| n)^{|C|} exp(-kappa t |C| cap / |B|)
    kappa: float
    C: float
    kappa_max: float  # largest kappa keeping lhs_upper <= rhs for this C
    holds: bool
    cond_tech: bool
    cond_value: float


def check_capacity_tail_bound(
    centres: Sequence[Sequence[int]],
    r: float,
    t: float,
    n: int,
    replicas: int,
    stream: RngStream,
    kappa: float = 0.1,
    C: float = 1.0,
    delta: float = 1.0,
    capacity: CapacityBracket | None = None,
) -> CapacityTailReport:
    """Both sides of the multiple-ball occupation bound for one family."""
    cs = np.asarray(centres, dtype=np.int64)
    d = cs.shape[1]
    if not in_family(cs, r):
        raise ValueError("centres are closer than 4r")
    fam = ball_family(cs, r)
    vol = len(fam)
    cap = capacity or capacity_dirichlet(fam, check_radius=False, R=int(max(4 * fam.radius(), 8)))
    occ = ball_occupations(stream, d, n, cs, r, replicas)
    hits = int(np.all(occ >= t, axis=1).sum())
    p = hits / replicas
    # one-sided 95% Clopper-Pearson style cushion via the Wilson score bound
    zz = 1.645
    denom = 1 + zz * zz / replicas
    p_up = (p + zz * zz / (2 * replicas) + zz * math.sqrt(p * (1 - p) / replicas + zz * zz / (4 * replicas**2))) / denom
    m = len(cs)
    expo = t * m * cap.lower / vol
    log_comb = math.log(C) + m * math.log(m * n)
    rhs = math.exp(min(log_comb - kappa * expo, 700.0))
    kmax = (log_comb - math.log(p_up)) / expo if expo > 0 else float("inf")
    cond_val = vol ** (2.0 / d) * math.log(max(n, 2))
    return CapacityTailReport(m, r, t, n, vol, cap, p, p_up, rhs, kappa, C, kmax, p_up <= rhs,
                         cond_val <= delta * t, cond_val)


@dataclass
class DiscriminationReport:
    cap_a: CapacityBracket
    cap_b: CapacityBracket
    p_a: float
    p_b: float
    z_stat: float
    larger_capacity: str
    lower_probability: str
    significant: bool
    consistent: bool


def capacity_discrimination(
    family_a: Sequence[Sequence[int]],
    family_b: Sequence[Sequence[int]],
    r: float,
    t: float,
    n: int,
    replicas: int,
    stream: RngStream,
    z_crit: float = 1.645,
) -> DiscriminationReport:
    """Compare all-balls-occupied probabilities of two matched-volume families.

    The family whose union of balls has the larger (bracketed) capacity is
    expected to have the smaller probability; the difference is tested with a
    one-sided two-proportion z test.
    """
    fa, fb = ball_family(family_a, r), ball_family(family_b, r)
    if len(fa) != len(fb):
        raise ValueError("families must have equal volume")
    ca = capacity_dirichlet(fa, check_radius=False, R=int(max(4 * fa.radius(), 8)), set_id="a")
    cb = capacity_dirichlet(fb, check_radius=False, R=int(max(4 * fb.radius(), 8)), set_id="b")
    d = len(family_a[0])
    oa = ball_occupations(stream.child(0), d, n, family_a, r, replicas)
    ob = ball_occupations(stream.child(1), d, n, family_b, r, replicas)
    pa = float(np.all(oa >= t, axis=1).mean())
    pb = float(np.all(ob >= t, axis=1).mean())
    if ca.lower > cb.upper:
        big = "a"
    elif cb.lower > ca.upper:
        big = "b"
    else:
        big = "undetermined"
    pool = 0.5 * (pa + pb)
    se = math.sqrt(max(pool * (1 - pool) * 2 / replicas, 1e-300))
    if big == "a":
        zst = (pb - pa) / se
    elif big == "b":
        zst = (pa - pb) / se
    else:
        zst = 0.0
    low = "a" if pa < pb else "b"
    return DiscriminationReport(ca, cb, pa, pb, zst, big, low, zst > z_crit, big == low)
