"""Excursions between spheres, confined walks, the covering experiment, and the
boundary-weighted polymer measure with its free-energy curve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.signal import fftconvolve
from scipy.sparse.linalg import eigsh

from rangewalk import _hashset as hs
from rangewalk.geometry import boundary_sizes
from rangewalk.lattice import PointSet, RngStream, Trajectory, ball_offsets, check_dim, path_from_directions, unit_steps

NEVER = np.iinfo(np.int64).max


# ---------------------------------------------------------------------------
# excursions


@dataclass
class ExcursionDecomposition:
    centre: tuple
    r_in: float
    r_out: float
    mode: str  # "exit": leave B(x, r_out); "shell": hit the inner boundary of B(x, r_out)
    sigma: list[int]
    tau: list[int]  # NEVER when the excursion does not end
    n: int

    @property
    def N(self) -> int:
        """sup{j : sigma_j <= n}."""
        return sum(1 for s in self.sigma if s <= self.n) - 1

    def durations(self) -> list[int]:
        """tau_j - sigma_j for j <= N, with unfinished excursions cut at n + 1."""
        out = []
        for j in range(self.N + 1):
            out.append(min(self.tau[j], self.n + 1) - self.sigma[j])
        return out

    def check(self, traj: Trajectory) -> None:
        """Alternation and shell membership; raises AssertionError on violation."""
        x = np.asarray(self.centre)
        pts = traj.points
        for j, s in enumerate(self.sigma):
            assert j == 0 or s >= self.tau[j - 1]
            if j >= 1:
                assert np.sum((pts[s] - x) ** 2) <= self.r_in**2 + 1e-9
            t = self.tau[j]
            if t != NEVER:
                assert t >= s
                dd = np.sum((pts[t] - x) ** 2)
                if self.mode == "exit":
                    assert dd > self.r_out**2 + 1e-9
                else:
                    assert dd <= self.r_out**2 + 1e-9


def excursions(traj: Trajectory, x, r_in: float, r_out: float, n: int | None = None,
               mode: str = "exit") -> ExcursionDecomposition:
    """Alternating stopping times sigma_0 = 0 <= tau_0 <= sigma_1 <= tau_1 ...

    tau_j is the first time from sigma_j outside B(x, r_out) (mode "exit") or
    on the inner boundary of B(x, r_out) (mode "shell"); sigma_{j+1} is the
    next time in B(x, r_in).  One pass over the path; times beyond its end are
    recorded as NEVER.
    """
    if not r_in < r_out:
        raise ValueError("need r_in < r_out")
    if mode not in ("exit", "shell"):
        raise ValueError("mode must be 'exit' or 'shell'")
    n = traj.n if n is None else n
    if n > traj.n:
        raise ValueError("n exceeds trajectory length")
    x = np.asarray(x, dtype=np.int64)
    d2 = ((traj.points - x) ** 2).sum(axis=1).astype(float)
    inner = d2 <= r_in**2 + 1e-9
    if mode == "exit":
        outer = d2 > r_out**2 + 1e-9
    else:
        inside = d2 <= r_out**2 + 1e-9
        # inner boundary of the ball: inside with a neighbour outside
        outer = np.zeros_like(inside)
        for e in unit_steps(traj.d):
            nd2 = ((traj.points + e - x) ** 2).sum(axis=1)
            outer |= inside & (nd2 > r_out**2 + 1e-9)
    sig, tau = [0], []
    k = 0
    looking_for_tau = True
    L = traj.n
    while True:
        if looking_for_tau:
            idx = np.nonzero(outer[k:])[0]
            if len(idx) == 0:
                tau.append(NEVER)
                break
            k = k + int(idx[0])
            tau.append(k)
            looking_for_tau = False
        else:
            idx = np.nonzero(inner[k:])[0]
            if len(idx) == 0:
                break
            k = k + int(idx[0])
            sig.append(k)
            looking_for_tau = True
        if k > L:
            break
    return ExcursionDecomposition(tuple(int(c) for c in x), r_in, r_out, mode, sig, tau, n)


@dataclass
class ExcursionOccupationReport:
    r: float
    t_grid: list[float]
    n: int
    replicas: int
    c: float
    frequencies: list[float]  # joint event frequency per t
    slope: float  # of log frequency against t/r^2 (nan if too few nonzero)
    c_hat: float  # median over samples of N_n r^2 / l_n over balls with l_n >= t_min
    bound_violations: int


def check_excursion_occupation(stream: RngStream, d: int, centres, r: float, t_grid: Sequence[float], n: int,
                  replicas: int, c: float = 0.5, start=None) -> ExcursionOccupationReport:
    """Joint frequency of {l_n(B(x,r)) >= t and N_n(x,r) <= c t/r^2 for all x}.

    Every sample also checks l_n(B(x,r)) <= sum_{j<=N_n} (tau_j - sigma_j)
    exactly (excursions from B(x,r) to the inner boundary of B(x,2r)).
    """
    cs = np.asarray(centres, dtype=np.int64).reshape(-1, d)
    rng = stream.generator()
    t_arr = np.asarray(t_grid, dtype=float)
    hits = np.zeros(len(t_arr))
    violations = 0
    ratios = []
    for _ in range(replicas):
        dirs = rng.integers(0, 2 * d, size=n)
        traj = Trajectory(d, path_from_directions(d, dirs, start))
        occ_all, N_all = [], []
        for x in cs:
            dec = excursions(traj, x, r, 2 * r, n, mode="shell")
            occ = int((((traj.points - x) ** 2).sum(axis=1) <= r * r + 1e-9).sum())
            if occ > sum(dec.durations()):
                violations += 1
            occ_all.append(occ)
            N_all.append(dec.N)
            if occ >= t_arr.min() and occ > 0:
                ratios.append(dec.N * r * r / occ)
        occ_all = np.array(occ_all)
        N_all = np.array(N_all)
        for i, t in enumerate(t_arr):
            if np.all(occ_all >= t) and np.all(N_all <= c * t / r**2):
                hits[i] += 1
    freq = hits / replicas
    x = t_arr / r**2
    pos = freq > 0
    slope = float(np.polyfit(x[pos], np.log(freq[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    c_hat = float(np.median(ratios)) if ratios else float("nan")
    return ExcursionOccupationReport(r, list(map(float, t_arr)), n, replicas, c, list(map(float, freq)), slope, c_hat, violations)


# ---------------------------------------------------------------------------
# killed kernel on a ball


@njit(cache=True)
def _killed_iterate(nb, start, steps, log_mass_out):
    """Propagate the walk killed outside the ball; record log of surviving mass per step."""
    m, nd = nb.shape
    p = np.zeros(m)
    q = np.zeros(m)
    p[start] = 1.0
    logm = 0.0
    log_mass_out[0] = 0.0
    inv = 1.0 / nd
    for k in range(1, steps + 1):
        tot = 0.0
        for i in range(m):
            acc = 0.0
            for j in range(nd):
                y = nb[i, j]
                if y >= 0:
                    acc += p[y]
            v = acc * inv
            q[i] = v
            tot += v
        if tot <= 0.0:
            for kk in range(k, steps + 1):
                log_mass_out[kk] = -np.inf
            return
        logm += math.log(tot)
        log_mass_out[k] = logm
        s = 1.0 / tot
        for i in range(m):
            p[i] = q[i] * s
            q[i] = 0.0


@dataclass
class BallKernel:
    """Simple random walk killed on leaving the closed ball B(0, rho)."""

    d: int
    rho: float
    points: np.ndarray  # (m, d)
    nb: np.ndarray  # (m, 2d) neighbour indices, -1 outside
    origin: int
    _eig: tuple | None = None

    @classmethod
    def build(cls, d: int, rho: float) -> "BallKernel":
        check_dim(d)
        pts = ball_offsets(d, rho)
        k = int(math.floor(rho + 1e-12))
        size = 2 * k + 3
        index = -np.ones((size,) * d, dtype=np.int64)
        index[tuple((pts + k + 1).T)] = np.arange(len(pts))
        nb = np.empty((len(pts), 2 * d), dtype=np.int64)
        for j, e in enumerate(unit_steps(d)):
            nb[:, j] = index[tuple((pts + e + k + 1).T)]
        origin = int(index[(k + 1,) * d])
        return cls(d, rho, pts, nb, origin)

    @property
    def size(self) -> int:
        return len(self.points)

    def eigen(self) -> tuple[float, np.ndarray]:
        """Top eigenvalue and positive eigenvector (unit l2 norm) of the killed kernel.

        The ground state is invariant under coordinate permutations and sign
        flips, so the problem is solved on canonical points 0 <= x_1 <= ... <= x_d
        with the kernel symmetrised by orbit sizes.  Samplers built on it stay
        exact whatever the solver tolerance, since their weights use local
        normalisers rather than the eigenvalue.
        """
        if self._eig is None:
            d = self.d
            canon = np.sort(np.abs(self.points), axis=1)
            ckeys = hs.encode(canon)
            uniq, inverse = np.unique(ckeys, return_inverse=True)
            mc = len(uniq)
            rep = np.zeros(mc, dtype=np.int64)
            rep[inverse] = np.arange(len(self.points))
            orbit = np.bincount(inverse, minlength=mc).astype(float)
            nb = self.nb[rep]
            rows = np.repeat(np.arange(mc), nb.shape[1])
            cols = nb.ravel()
            keep = cols >= 0
            K = sp.csr_matrix((np.full(keep.sum(), 1.0 / (2 * d)), (rows[keep], inverse[cols[keep]])),
                              shape=(mc, mc))
            sq = np.sqrt(orbit)
            S = sp.diags(sq) @ K @ sp.diags(1.0 / sq)
            S = 0.5 * (S + S.T)
            if mc <= 3:
                vals, vecs = np.linalg.eigh(S.toarray())
                lam, psi = vals[-1], vecs[:, -1]
            else:
                r = np.sqrt((self.points[rep] ** 2).sum(axis=1))
                v0 = sq * np.cos(0.5 * np.pi * r / (self.rho + 1.0))
                vals, vecs = eigsh(S, k=1, which="LA", tol=1e-10, v0=v0)
                lam, psi = vals[0], vecs[:, 0]
            phi = np.abs(psi / sq)[inverse]
            phi /= np.linalg.norm(phi)
            self._eig = (float(lam), phi)
        return self._eig

    def log_survival(self, n: int, exact_steps: int | None = None) -> float:
        """log P[S_k in the ball for k = 0..n] for the walk from the origin.

        Exact kernel iteration up to ``exact_steps`` (default: all n steps);
        beyond that the two-step decay ratio of the iteration, which has
        converged to the squared top eigenvalue, extends the curve.
        """
        steps = n if exact_steps is None else min(n, exact_steps)
        out = np.zeros(steps + 1)
        _killed_iterate(self.nb, self.origin, steps, out)
        if steps == n:
            return float(out[n])
        k0 = steps if (steps - n) % 2 == 0 else steps - 1
        rate2 = out[k0] - out[k0 - 2]
        return float(out[k0] + (n - k0) / 2.0 * rate2)

    def survival_curve(self, n: int) -> np.ndarray:
        out = np.zeros(n + 1)
        _killed_iterate(self.nb, self.origin, n, out)
        return out


def confinement_probability(d: int, n: int, rho: float, exact_steps: int | None = None) -> float:
    """log P[R_n inside B(0, rho)] for the walk from the origin."""
    return BallKernel.build(d, rho).log_survival(n, exact_steps)


@dataclass
class ConfinementScaling:
    n_grid: list[int]
    rho_grid: list[float]
    x: np.ndarray  # n / rho^2
    logp: np.ndarray
    slope: float
    intercept: float
    r2: float
    half_slopes: tuple[float, float]  # fits on the smaller-rho and larger-rho halves
    half_slopes_n: tuple[float, float]  # fits on the smaller-n and larger-n halves


def _lin(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(((y - a * x - b) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return float(a), float(b), (1.0 - ss_res / ss_tot) if ss_tot > 0 else 1.0


def confinement_scaling(d: int, n_grid: Sequence[int], rho_grid: Sequence[float],
                        exact_steps: int | None = None) -> ConfinementScaling:
    """log P[R_n in B(0,rho)] over a grid, regressed on n/rho^2."""
    xs, ys, tags = [], [], []
    for rho in rho_grid:
        ker = BallKernel.build(d, rho)
        for n in n_grid:
            xs.append(n / rho**2)
            ys.append(ker.log_survival(n, exact_steps))
            tags.append((rho, n))
    x, y = np.array(xs), np.array(ys)
    a, b, r2 = _lin(x, y)
    rhos = np.array([t[0] for t in tags])
    ns = np.array([t[1] for t in tags])
    med_r = np.median(np.unique(rhos))
    med_n = np.median(np.unique(ns))
    lo, hi = rhos <= med_r, rhos > med_r
    half = (_lin(x[lo], y[lo])[0], _lin(x[hi], y[hi])[0])
    lo_n, hi_n = ns <= med_n, ns > med_n
    half_n = (_lin(x[lo_n], y[lo_n])[0], _lin(x[hi_n], y[hi_n])[0])
    return ConfinementScaling(list(n_grid), list(rho_grid), x, y, a, b, r2, half, half_n)


# ---------------------------------------------------------------------------
# h-transformed (ground-state conditioned) walks with exact reweighting


@njit(cache=True)
def _track_add(key, nd, skeys, tk, tv, used, nused, state):
    """Insert a visited key and update (|R|, |dR|) stored in state[0], state[1]."""
    slot = hs.ht_slot(tk, key)
    if tk[slot] == key:
        return nused
    tk[slot] = key
    used[nused] = slot
    nused += 1
    cnt = 0
    for j in range(nd):
        q = key + skeys[j]
        qs = hs.ht_slot(tk, q)
        if tk[qs] == q:
            cnt += 1
            tv[qs] += 1
            if tv[qs] == nd:
                state[1] -= 1
    tv[slot] = cnt
    state[0] += 1
    if cnt < nd:
        state[1] += 1
    return nused


@njit(cache=True)
def _clear(tk, tv, used, nused):
    for i in range(nused):
        tk[used[i]] = -1
        tv[used[i]] = 0


@njit(cache=True)
def _h_steps(T, nb, cum, origin, u, loglam, out_idx):
    """T conditioned steps from the origin; fills out_idx[0..T] and returns sum of loglam along the way."""
    idx = origin
    out_idx[0] = idx
    acc = 0.0
    for k in range(T):
        acc += loglam[idx]
        x = u[k]
        j = 0
        while cum[idx, j] <= x:
            j += 1
        idx = nb[idx, j]
        out_idx[k + 1] = idx
    return acc


@njit(cache=True)
def _h_walk(T, nb, cum, origin, point_keys, u, loglam, free_dirs, skeys, tk, tv, used, state, out_idx):
    """One walk: T ground-state-conditioned steps in the ball, then free steps.

    Returns the accumulated loglam; S_T is out_idx[T].  (|R_n|, |dR_n|) are
    left in ``state`` and the table is cleared afterwards.
    """
    nd = skeys.size
    acc = _h_steps(T, nb, cum, origin, u, loglam, out_idx)
    nused = 0
    state[0] = 0
    state[1] = 0
    for k in range(T + 1):
        nused = _track_add(point_keys[out_idx[k]], nd, skeys, tk, tv, used, nused, state)
    key = point_keys[out_idx[T]]
    for k in range(free_dirs.size):
        key += skeys[free_dirs[k]]
        nused = _track_add(key, nd, skeys, tk, tv, used, nused, state)
    _clear(tk, tv, used, nused)
    return acc


@dataclass
class WeightedSample:
    log_weights: np.ndarray  # log dP/dQ on the confinement event
    boundary: np.ndarray
    range_size: np.ndarray
    end_index: np.ndarray


class ConfinedSampler:
    """Walks whose first T steps follow the ground-state h-transform of the ball.

    Under this law the first T steps stay in B(0, rho) surely.  With
    Z(x) = sum of phi over the in-ball neighbours of x, the density of the plain
    walk restricted to {R_T in the ball} is
    prod_k Z(S_k)/(2d phi(S_k)) * phi(0)/phi(S_T), which is lambda^T phi(0)/phi(S_T)
    for the exact eigenvector and stays exact for an approximate one, so
    weighted averages are unbiased for P[A and R_T in the ball].
    """

    def __init__(self, d: int, rho: float):
        self.kernel = BallKernel.build(d, rho)
        lam, phi = self.kernel.eigen()
        self.lam, self.phi = lam, phi
        nb = self.kernel.nb
        w = np.where(nb >= 0, phi[np.maximum(nb, 0)], 0.0)
        z = w.sum(axis=1)
        self.loglam = np.log(z / (nb.shape[1] * phi))
        w = w / z[:, None]
        self.cum = np.cumsum(w, axis=1)
        self.cum[:, -1] = 1.0
        self.point_keys = hs.encode(self.kernel.points)
        self.d = d

    def sample(self, stream: RngStream, T: int, n: int, replicas: int) -> WeightedSample:
        d = self.d
        skeys = hs.step_keys(d)
        tk, tv = hs.new_table(n + 1)
        used = np.zeros(n + 1, dtype=np.int64)
        state = np.zeros(2, dtype=np.int64)
        rng = stream.generator()
        lw = np.zeros(replicas)
        bnd = np.zeros(replicas, dtype=np.int64)
        rs = np.zeros(replicas, dtype=np.int64)
        ends = np.zeros(replicas, dtype=np.int64)
        out_idx = np.zeros(T + 1, dtype=np.int64)
        base = math.log(self.phi[self.kernel.origin])
        for i in range(replicas):
            u = rng.random(T)
            fd = rng.integers(0, 2 * d, size=n - T)
            acc = _h_walk(T, self.kernel.nb, self.cum, self.kernel.origin, self.point_keys, u, self.loglam,
                          fd, skeys, tk, tv, used, state, out_idx)
            e = out_idx[T]
            ends[i] = e
            lw[i] = base + acc - math.log(self.phi[e])
            rs[i], bnd[i] = state[0], state[1]
        return WeightedSample(lw, bnd, rs, ends)

    def path(self, stream: RngStream, T: int, n: int) -> tuple[Trajectory, float]:
        """One explicit path (positions) and its log weight."""
        rng = stream.generator()
        out_idx = np.zeros(T + 1, dtype=np.int64)
        acc = _h_steps(T, self.kernel.nb, self.cum, self.kernel.origin, rng.random(T), self.loglam, out_idx)
        pts = self.kernel.points[out_idx]
        if n > T:
            free = path_from_directions(self.d, rng.integers(0, 2 * self.d, size=n - T), pts[-1])
            pts = np.concatenate([pts, free[1:]])
        idx = out_idx[T]
        lw = math.log(self.phi[self.kernel.origin]) + acc - math.log(self.phi[idx])
        return Trajectory(self.d, pts, stream.seed, stream.index), lw


def log_mean_exp(a: np.ndarray) -> float:
    m = float(np.max(a))
    if not np.isfinite(m):
        return -np.inf
    return m + math.log(float(np.mean(np.exp(a - m))))


def weighted_log_prob(log_w: np.ndarray, indicator: np.ndarray) -> tuple[float, float]:
    """log of the mean of w 1_A, with a delta-method standard error on the log scale."""
    a = np.where(indicator, log_w, -np.inf)
    if not np.any(indicator):
        return -np.inf, np.inf
    m = float(np.max(a))
    v = np.exp(a - m)
    mean = v.mean()
    se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else np.inf
    return m + math.log(mean), float(se / mean)


def mean_boundary_direct(d: int, n: int, replicas: int, stream: RngStream) -> tuple[float, float]:
    """Plain Monte Carlo mean and standard error of |dR_n|."""
    vals = np.empty(replicas)
    for j in range(replicas):
        dirs = stream.replica(j).generator().integers(0, 2 * d, size=n, dtype=np.int64)
        vals[j] = boundary_sizes(dirs, d, np.array([n]))[1][0]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas))


def strategy_family(d: int, n: int, eps: float, strategy_grid: Sequence[float] | None = None) -> list[dict]:
    """Confinement strategies for the deficit {|dR_n| - mean <= -eps n}.

    d = 3: the whole path stays in B(0, c (n/eps)^{1/3}).
    d >= 4: the first a eps n steps stay in B(0, b (eps n)^{1/d}), the rest is free.
    """
    out = []
    if d == 3:
        for c in strategy_grid or (0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6):
            out.append({"T": n, "rho": c * (n / eps) ** (1.0 / 3.0), "c": c})
    else:
        for a in (2.0, 2.5, 3.0, 3.5, 4.0):
            for b in strategy_grid or (0.9, 1.0, 1.1, 1.2, 1.3):
                T = min(n, int(round(a * eps * n)))
                out.append({"T": T, "rho": b * (eps * n) ** (1.0 / d), "a": a, "b": b})
    return out


def confined_strategy_cost(d: int, n: int, eps: float, replicas: int, stream: RngStream,
                           mu: float | None = None, strategy_grid: Sequence[float] | None = None,
                           mu_replicas: int = 400) -> tuple[float, float, dict] | None:
    """Smallest -log P[confinement and deficit >= eps n] over the strategy family.

    Each candidate is estimated without bias by ground-state conditioned
    sampling with exact reweighting.  Returns (cost, stderr, strategy) or None
    when no candidate produced the deficit.
    """
    if mu is None:
        mu, _ = mean_boundary_direct(d, n, mu_replicas, stream.child(99))
    best = None
    for j, strat in enumerate(strategy_family(d, n, eps, strategy_grid)):
        if strat["rho"] < 1.0:
            continue
        sampler = ConfinedSampler(d, strat["rho"])
        ws = sampler.sample(stream.child(j), strat["T"], n, replicas)
        hit = ws.boundary - mu <= -eps * n
        lp, se = weighted_log_prob(ws.log_weights, hit)
        if not np.isfinite(lp):
            continue
        cost = -lp
        rec = dict(strat, mu=mu, hit_fraction=float(hit.mean()), lam=sampler.lam)
        if best is None or cost < best[0]:
            best = (cost, se, rec)
    return best


# ---------------------------------------------------------------------------
# confined sampling


def boustrophedon_path(d: int, n: int, rho: float) -> np.ndarray:
    """Deterministic nearest-neighbour path of length n inside B(0, rho) from the origin.

    Snakes through the cube [0, s]^d with s = floor(rho / sqrt(d)) (which lies
    in the ball) and retraces itself whenever it reaches an end.
    """
    s = int(math.floor(rho / math.sqrt(d) + 1e-12))
    if s < 1:
        seq = np.zeros((1, d), dtype=np.int64) if rho < 1 else np.stack([np.zeros(d, dtype=np.int64), np.eye(d, dtype=np.int64)[0]])
    else:
        def snake(dim):
            if dim == 1:
                return [[v] for v in range(s + 1)]
            sub = snake(dim - 1)
            out = []
            for j in range(s + 1):
                part = sub if j % 2 == 0 else sub[::-1]
                out.extend([c + [j] for c in part])
            return out
        seq = np.array(snake(d), dtype=np.int64)
    if len(seq) == 1:
        return np.zeros((n + 1, d), dtype=np.int64)
    cycle = np.concatenate([seq, seq[-2:0:-1]]) if len(seq) > 2 else seq
    idx = np.arange(n + 1) % len(cycle)
    return cycle[idx]


@njit(cache=True)
def _positions_inside(dirs, start, r2):
    d = start.size
    pos = start.copy()
    for k in range(dirs.size):
        s = dirs[k]
        ax = s >> 1
        if s & 1:
            pos[ax] -= 1
        else:
            pos[ax] += 1
        acc = 0
        for i in range(d):
            acc += pos[i] * pos[i]
        if acc > r2:
            return False
    return True


def directions_of(points: np.ndarray) -> np.ndarray:
    st = np.diff(points, axis=0)
    axis = np.argmax(np.abs(st), axis=1)
    sign = st[np.arange(len(st)), axis]
    return (2 * axis + (sign < 0)).astype(np.int64)


@dataclass
class ConfinedRun:
    trajectories: list[Trajectory]
    method: str
    attempts: int
    acceptance: float
    burn_in: int = 0
    tau_int: float = float("nan")


class BudgetExhausted(RuntimeError):
    pass


def sample_confined(stream: RngStream, d: int, n: int, rho: float, method: str = "rejection",
                    samples: int = 1, max_attempts: int = 10**6, feasibility: float = 0.5,
                    block_len_mean: float = 8.0, thin: int | None = None, burn_in: int | None = None) -> ConfinedRun:
    """Walks of length n with R_n inside B(0, rho).

    ``rejection`` draws plain walks until ``samples`` of them stay inside (exact
    conditional law; only allowed when rho >= feasibility * sqrt(n)).
    ``path-mcmc`` runs Metropolis on step sequences restricted to the event,
    starting from a boustrophedon path, with burn-in of ten integrated
    autocorrelation times of |dR_n| measured on a pilot run.
    """
    check_dim(d)
    r2 = int(math.floor(rho * rho + 1e-9))
    rng = stream.generator()
    if method == "rejection":
        if rho < feasibility * math.sqrt(n):
            raise ValueError(f"rejection needs rho >= {feasibility} sqrt(n); use path-mcmc")
        out, tries = [], 0
        zero = np.zeros(d, dtype=np.int64)
        while len(out) < samples:
            if tries >= max_attempts:
                raise BudgetExhausted(f"rejection budget of {max_attempts} exhausted")
            dirs = rng.integers(0, 2 * d, size=n)
            tries += 1
            if _positions_inside(dirs, zero, r2):
                out.append(Trajectory(d, path_from_directions(d, dirs), stream.seed, stream.index))
        return ConfinedRun(out, method, tries, len(out) / tries)
    if method != "path-mcmc":
        raise ValueError(f"unknown method {method!r}")
    init = boustrophedon_path(d, n, rho)
    assert np.all((init**2).sum(axis=1) <= r2)
    dirs = directions_of(init) if n > 0 else np.zeros(0, dtype=np.int64)
    chain = PolymerChain(d, n, 0.0, 0.0, block_len_mean, rho=rho)
    chain.set_state(dirs)
    per = chain.proposals_per_sweep
    pilot = chain.run(rng, 200 * per, record_every=per)
    tau = integrated_autocorr(pilot["boundary"])
    if burn_in is None:
        burn_in = int(math.ceil(10 * tau)) * per
    chain.run(rng, burn_in, record_every=0)
    thin = thin or max(per * int(math.ceil(2 * tau)), 1)
    out = []
    for _ in range(samples):
        chain.run(rng, thin, record_every=0)
        pts = path_from_directions(d, chain.dirs)
        assert np.all((pts**2).sum(axis=1) <= r2), "confinement violated"
        out.append(Trajectory(d, pts, stream.seed, stream.index))
    return ConfinedRun(out, method, chain.proposed, chain.accepted / max(chain.proposed, 1), burn_in, tau)


# ---------------------------------------------------------------------------
# covering experiment


@dataclass
class CoverReport:
    n: int
    eps: float
    rho: float
    volume: int
    confine_radius: float
    confined_log_prob: float  # log P[cover and R_n in B(0, confine_radius)]
    confined_log_se: float
    conditional_freq: float  # P[cover | R_n in B(0, confine_radius)]
    free_freq: float
    scale: float  # eps^{2/3} n^{1/3}
    x_sums_ok: bool
    x_examples: list[list[int]]


def excursion_hits(traj: Trajectory, lam: PointSet, rho: float, n: int) -> list[int]:
    """X_i = |R^(i) cap L_i| for excursions from B(0, 2 rho) to the exit of B(0, 5 rho)."""
    dec = excursions(traj, np.zeros(traj.d, dtype=np.int64), 2 * rho, 5 * rho, n, mode="exit")
    remaining = set(lam.elements)
    out = []
    for j in range(dec.N + 1):
        a = dec.sigma[j]
        b = min(dec.tau[j], n)
        seg = set(map(tuple, traj.points[a : b + 1].tolist()))
        hit = seg & remaining
        out.append(len(hit))
        remaining -= hit
    return out


def covering_experiment(stream: RngStream, n: int, eps: float, lam: PointSet, replicas: int,
                        c: float = 1.0, C: float = 1.0, d: int = 3, x_samples: int = 20,
                        confine_factor: float = 2.0) -> CoverReport:
    """P[|R_n cap L| > eps |L|] for confined and for free walks.

    rho = c (n/eps)^{1/3}.  Confined walks stay in B(0, confine_factor * rho)
    and are drawn by ground-state conditioning with exact weights; the
    conditional frequency is the self-normalised weighted mean.
    """
    if d != 3:
        raise ValueError("the covering experiment is set in d = 3")
    rho = c * (n / eps) ** (1.0 / 3.0)
    if lam.radius() > rho + 1e-9 or len(lam) < C / eps**3:
        raise ValueError("set violates the size/shape precondition")
    sampler = ConfinedSampler(d, confine_factor * rho)
    rng = stream.child(0)
    lam_keys = lam.keys()
    lw = np.zeros(replicas)
    hit_c = np.zeros(replicas, dtype=bool)
    xs, sums_ok = [], True
    for i in range(replicas):
        traj, w = sampler.path(rng.child(i), n, n)
        lw[i] = w
        cover = np.isin(lam_keys, traj.keys()).sum()
        hit_c[i] = cover > eps * len(lam)
        if i < x_samples:
            X = excursion_hits(traj, lam, rho, n)
            xs.append(X)
            sums_ok &= sum(X) <= cover <= len(lam)
    lp, se = weighted_log_prob(lw, hit_c)
    wts = np.exp(lw - lw.max())
    cond = float((wts * hit_c).sum() / wts.sum())
    frng = stream.child(1).generator()
    hit_f = 0
    for i in range(replicas):
        pts = path_from_directions(d, frng.integers(0, 2 * d, size=n))
        cover = np.isin(lam_keys, hs.encode(pts)).sum()
        hit_f += cover > eps * len(lam)
    return CoverReport(n, eps, rho, len(lam), confine_factor * rho, lp, se, cond, hit_f / replicas,
                       eps ** (2 / 3) * n ** (1 / 3), bool(sums_ok), xs)


# ---------------------------------------------------------------------------
# polymer measure


@njit(cache=True)
def _path_boundary(dirs, skeys, start_key, tk, tv, used, state, pos_keys):
    nd = skeys.size
    state[0] = 0
    state[1] = 0
    nused = 0
    key = start_key
    pos_keys[0] = key
    nused = _track_add(key, nd, skeys, tk, tv, used, nused, state)
    for k in range(dirs.size):
        key += skeys[dirs[k]]
        pos_keys[k + 1] = key
        nused = _track_add(key, nd, skeys, tk, tv, used, nused, state)
    _clear(tk, tv, used, nused)
    return state[1]


@njit(cache=True)
def _inside(pos_keys, bits, off, d, r2):
    mask = (1 << bits) - 1
    for k in range(pos_keys.size):
        key = pos_keys[k]
        acc = 0
        for i in range(d):
            c = ((key >> (bits * i)) & mask) - off
            acc += c * c
        if acc > r2:
            return False
    return True


@njit(cache=True)
def _propose(dirs, block_p, n_dirs, backup):
    """Redraw a geometric-length block (prob 0.8) or one step; returns (start, length)."""
    n = dirs.size
    if np.random.random() < 0.8:
        L = 1
        if block_p < 1.0:
            L = 1 + int(math.log(1.0 - np.random.random()) / math.log(1.0 - block_p))
        if L > n:
            L = n
        a = np.random.randint(0, n - L + 1)
    else:
        L = 1
        a = np.random.randint(0, n)
    for j in range(L):
        backup[j] = dirs[a + j]
        dirs[a + j] = np.random.randint(0, n_dirs)
    return a, L


@njit(cache=True)
def _chain_run(seed, dirs, n_prop, beta_scaled, block_p, skeys, start_key, tk, tv, used, state, pos_keys,
               confine, bits, off, d, r2, record_every, rec_b, rec_r, cur_b, cur_r):
    """Metropolis on step sequences; returns (accepted, current boundary, current range, n recorded)."""
    np.random.seed(seed)
    n = dirs.size
    acc_count = 0
    nrec = 0
    backup = np.empty(n, dtype=dirs.dtype)
    for it in range(n_prop):
        if n == 0:
            break
        a, L = _propose(dirs, block_p, skeys.size, backup)
        nb = _path_boundary(dirs, skeys, start_key, tk, tv, used, state, pos_keys)
        nr = state[0]
        ok = True
        if confine:
            ok = _inside(pos_keys, bits, off, d, r2)
        u = np.random.random()
        if ok:
            delta = nb - cur_b
            if delta > 0 and beta_scaled > 0.0:
                ok = u < math.exp(-beta_scaled * delta)
        if ok:
            cur_b = nb
            cur_r = nr
            acc_count += 1
        else:
            for j in range(L):
                dirs[a + j] = backup[j]
        if record_every > 0 and (it + 1) % record_every == 0 and nrec < rec_b.size:
            rec_b[nrec] = cur_b
            rec_r[nrec] = cur_r
            nrec += 1
    return acc_count, cur_b, cur_r, nrec


class PolymerChain:
    """Metropolis chain for the law proportional to exp(-beta/n^{2/d} (|dR_n| - mu)) on step sequences.

    Proposals: with probability 0.8 a contiguous block of geometric length
    (mean ``block_len_mean``) is redrawn uniformly, otherwise one step is
    redrawn.  Both are symmetric, so acceptance is min(1, exp(-beta' delta)).
    With ``rho`` set, states leaving B(0, rho) are rejected.
    """

    def __init__(self, d: int, n: int, beta: float, mu: float, block_len_mean: float = 8.0,
                 rho: float | None = None):
        check_dim(d)
        self.d, self.n, self.beta, self.mu = d, n, beta, mu
        self.block_len_mean = max(block_len_mean, 1.0)
        self.rho = rho
        self.beta_scaled = beta / n ** (2.0 / d) if n > 0 else 0.0
        self.skeys = hs.step_keys(d)
        self.start_key = int(hs.encode(np.zeros((1, d), dtype=np.int64))[0])
        self.tk, self.tv = hs.new_table(n + 1)
        self.used = np.zeros(n + 1, dtype=np.int64)
        self.state = np.zeros(2, dtype=np.int64)
        self.pos_keys = np.zeros(n + 1, dtype=np.int64)
        self.dirs = np.zeros(n, dtype=np.int64)
        self.cur_b = 0
        self.cur_r = 0
        self.proposed = 0
        self.accepted = 0

    @property
    def proposals_per_sweep(self) -> int:
        return max(1, int(round(self.n / self.block_len_mean)))

    def set_state(self, dirs: np.ndarray) -> None:
        self.dirs = np.asarray(dirs, dtype=np.int64).copy()
        self.cur_b = int(_path_boundary(self.dirs, self.skeys, self.start_key, self.tk, self.tv, self.used,
                                        self.state, self.pos_keys))
        self.cur_r = int(self.state[0])
        if self.rho is not None:
            r2 = int(math.floor(self.rho**2 + 1e-9))
            if not _inside(self.pos_keys, hs.key_bits(self.d), hs.key_offset(self.d), self.d, r2):
                raise ValueError("initial state violates confinement")

    def energy(self) -> float:
        return self.beta_scaled * (self.cur_b - self.mu)

    def run(self, rng: np.random.Generator, n_prop: int, record_every: int = 0) -> dict:
        if n_prop <= 0:
            return {"boundary": np.zeros(0, dtype=np.int64), "range": np.zeros(0, dtype=np.int64)}
        d = self.d
        nrec_max = n_prop // record_every if record_every > 0 else 0
        rec_b = np.zeros(nrec_max, dtype=np.int64)
        rec_r = np.zeros(nrec_max, dtype=np.int64)
        r2 = int(math.floor(self.rho**2 + 1e-9)) if self.rho is not None else 0
        seed = int(rng.integers(0, 2**62))
        acc, cb, cr, nrec = _chain_run(seed, self.dirs, n_prop, self.beta_scaled, 1.0 / self.block_len_mean,
                                       self.skeys, self.start_key, self.tk, self.tv, self.used, self.state,
                                       self.pos_keys, self.rho is not None, hs.key_bits(d), hs.key_offset(d), d, r2,
                                       record_every, rec_b, rec_r, self.cur_b, self.cur_r)
        self.cur_b, self.cur_r = int(cb), int(cr)
        self.proposed += n_prop
        self.accepted += int(acc)
        return {"boundary": rec_b[:nrec], "range": rec_r[:nrec]}

    def positions(self) -> np.ndarray:
        return path_from_directions(self.d, self.dirs)


def integrated_autocorr(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with an automatic window (window >= c tau)."""
    x = np.asarray(x, dtype=float)
    if len(x) < 4 or x.std() == 0:
        return 1.0
    y = x - x.mean()
    nfft = 1 << (2 * len(y) - 1).bit_length()
    f = np.fft.rfft(y, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[: len(y)]
    acf /= acf[0]
    tau = 1.0
    for w in range(1, len(y)):
        tau = 1.0 + 2.0 * acf[1 : w + 1].sum()
        if w >= c * tau:
            break
    return max(float(tau), 1.0)


def r_n_rule(d: int, n: int, rule: str | float = "upper") -> float:
    """Ball radius for the localisation diagnostic.

    The window n^{2/d} (log n)^2 <= r^d <= n / log n is empty at desk-scale n,
    so the default is the upper end r = (n / log n)^{1/d}.  ``"lower"`` gives
    the other end and a number is used as the radius directly.
    """
    log_n = math.log(max(n, 3))
    if rule == "upper":
        return (n / log_n) ** (1.0 / d)
    if rule == "lower":
        return (n ** (2.0 / d) * log_n**2) ** (1.0 / d)
    if isinstance(rule, (int, float)) and rule > 0:
        return float(rule)
    raise ValueError(f"unknown r_n rule {rule!r}")


def max_ball_occupation(points: np.ndarray, r: float) -> int:
    """max over x in Z^d of l_n(B(x, r)) by convolving the visit histogram with the ball."""
    d = points.shape[1]
    k = int(math.floor(r + 1e-12))
    lo = points.min(axis=0) - k
    hi = points.max(axis=0) + k
    shape = tuple(int(v) for v in hi - lo + 1)
    hist = np.zeros(shape)
    np.add.at(hist, tuple((points - lo).T), 1.0)
    ball = np.zeros((2 * k + 1,) * d)
    off = ball_offsets(d, r)
    ball[tuple((off + k).T)] = 1.0
    conv = fftconvolve(hist, ball, mode="same")
    return int(np.rint(conv.max()))


def gyration_radius(points: np.ndarray) -> float:
    c = points.mean(axis=0)
    return float(np.sqrt(((points - c) ** 2).sum(axis=1).mean()))


@dataclass
class PolymerEnsemble:
    d: int
    n: int
    beta: float
    mu: float
    boundary: np.ndarray
    range_size: np.ndarray
    gyration: np.ndarray
    max_ball: np.ndarray
    r_n: float
    acceptance: float
    tau_int: float
    sweeps: int
    burn_in: int

    def energy(self) -> np.ndarray:
        """Centred, rescaled boundary -(|dR_n| - mu)/n^{2/d} per recorded state."""
        return -(self.boundary - self.mu) / self.n ** (2.0 / self.d)

    def mean_se(self, values: np.ndarray) -> tuple[float, float]:
        v = np.asarray(values, dtype=float)
        tau = integrated_autocorr(v)
        return float(v.mean()), float(v.std(ddof=1) * math.sqrt(tau / len(v))) if len(v) > 1 else float("inf")


def polymer_mcmc(stream: RngStream, d: int, n: int, beta: float, sweeps: int, mu: float,
                 burn_in: int | None = None, block_len_mean: float = 8.0, diag_every: int = 10,
                 r_n: float | None = None, init: np.ndarray | None = None) -> PolymerEnsemble:
    """Sample the polymer measure; observables are recorded once per sweep.

    Burn-in defaults to a tenth of the sweeps (at least 100).  Gyration radius
    and max-ball occupation are recorded every ``diag_every`` sweeps.
    """
    rng = stream.generator()
    chain = PolymerChain(d, n, beta, mu, block_len_mean)
    chain.set_state(rng.integers(0, 2 * d, size=n) if init is None else init)
    per = chain.proposals_per_sweep
    burn = max(sweeps // 10, 100) if burn_in is None else burn_in
    chain.run(rng, burn * per, record_every=0)
    r_n = r_n_rule(d, n) if r_n is None else r_n
    bs, rs, gy, mb = [], [], [], []
    done = 0
    while done < sweeps:
        m = min(diag_every, sweeps - done)
        rec = chain.run(rng, m * per, record_every=per)
        bs.append(rec["boundary"])
        rs.append(rec["range"])
        pts = chain.positions()
        gy.append(gyration_radius(pts))
        mb.append(max_ball_occupation(pts, r_n))
        done += m
    b = np.concatenate(bs)
    tau = integrated_autocorr(b)
    return PolymerEnsemble(d, n, beta, mu, b, np.concatenate(rs), np.array(gy), np.array(mb), r_n,
                           chain.accepted / max(chain.proposed, 1), tau, sweeps, burn)


@dataclass
class FreeEnergyCurve:
    betas: np.ndarray
    mean_energy: np.ndarray  # E_Q^b[-(|dR_n| - mu)/n^{2/d}]
    energy_se: np.ndarray
    log_z: np.ndarray  # integrated log Z_n(beta) / n^{1-2/d}
    log_z_se: np.ndarray
    beta_band: tuple[float, float] | None
    monotone_energy: bool
    monotone_curve: bool
    localisation: np.ndarray  # mean max-ball occupation per beta
    localisation_se: np.ndarray
    gyration_median: np.ndarray
    eps_beta: np.ndarray  # mean of -(|dR_n| - mu)/n


def free_energy_curve(ensembles: Sequence[PolymerEnsemble], z: float = 1.96,
                      max_knot_change: float | None = None) -> FreeEnergyCurve:
    """Thermodynamic integration of the mean energy over the beta grid.

    d/dbeta log Z_n(beta) = E_Q^beta[-(|dR_n| - mu)/n^{2/d}]; the trapezoid
    rule gives log Z_n(beta), reported divided by n^{1-2/d}.  The grid must
    start at beta = 0.
    """
    ens = sorted(ensembles, key=lambda e: e.beta)
    betas = np.array([e.beta for e in ens])
    if len(betas) == 0 or betas[0] != 0.0:
        raise ValueError("the beta grid must start at 0")
    if np.any(np.diff(betas) <= 0):
        raise ValueError("beta knots must be distinct")
    n, d = ens[0].n, ens[0].d
    ms = [e.mean_se(e.energy()) for e in ens]
    mean = np.array([m for m, _ in ms])
    se = np.array([s for _, s in ms])
    if max_knot_change is not None:
        scale = np.maximum(np.abs(mean[:-1]), np.abs(mean[1:]))
        jumps = np.abs(np.diff(mean)) / np.maximum(scale, 1e-12)
        if np.any(jumps > max_knot_change):
            raise ValueError("beta knots too far apart for the integrand")
    logz = np.zeros(len(betas))
    var = np.zeros(len(betas))
    for i in range(1, len(betas)):
        h = betas[i] - betas[i - 1]
        logz[i] = logz[i - 1] + 0.5 * h * (mean[i] + mean[i - 1])
        var[i] = var[i - 1] + (0.5 * h) ** 2 * (se[i] ** 2 + se[i - 1] ** 2)
    norm = n ** (1.0 - 2.0 / d)
    logz_n = logz / norm
    lse = np.sqrt(var) / norm
    mono_e = bool(np.all(np.diff(mean) >= -z * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)))
    mono_c = bool(np.all(np.diff(logz_n) >= -z * np.sqrt(lse[1:] ** 2 + lse[:-1] ** 2)))
    above = np.nonzero(logz_n - z * lse > 0)[0]
    band = (float(betas[above[0] - 1]), float(betas[above[0]])) if len(above) and above[0] > 0 else None
    loc = [e.mean_se(e.max_ball) for e in ens]
    eps_b = np.array([float(np.mean(-(e.boundary - e.mu) / e.n)) for e in ens])
    return FreeEnergyCurve(betas, mean, se, logz_n, lse, band, mono_e, mono_c,
                           np.array([m for m, _ in loc]), np.array([s for _, s in loc]),
                           np.array([float(np.median(e.gyration)) for e in ens]), eps_b)


# ---------------------------------------------------------------------------
# tiny-instance check of the chain


def enumerate_boundaries(d: int, n: int) -> np.ndarray:
    """|dR_n| for every step sequence, indexed by sum_k dirs[k] (2d)^k."""
    total = (2 * d) ** n
    out = np.zeros(total, dtype=np.int64)
    digits = np.zeros(n, dtype=np.int64)
    skeys = hs.step_keys(d)
    tk, tv = hs.new_table(n + 1)
    used = np.zeros(n + 1, dtype=np.int64)
    state = np.zeros(2, dtype=np.int64)
    pk = np.zeros(n + 1, dtype=np.int64)
    start = int(hs.encode(np.zeros((1, d), dtype=np.int64))[0])
    return _enumerate(out, digits, skeys, start, tk, tv, used, state, pk)


@njit(cache=True)
def _enumerate(out, digits, skeys, start, tk, tv, used, state, pk):
    nd = skeys.size
    n = digits.size
    for idx in range(out.size):
        x = idx
        for k in range(n):
            digits[k] = x % nd
            x //= nd
        out[idx] = _path_boundary(digits, skeys, start, tk, tv, used, state, pk)
    return out


@njit(cache=True)
def _state_index(dirs, nd):
    idx = 0
    mult = 1
    for k in range(dirs.size):
        idx += dirs[k] * mult
        mult *= nd
    return idx


@njit(cache=True)
def _tiny_chain(seed, dirs, base, n_prop, beta_scaled, block_p, boundary_of, counts):
    np.random.seed(seed)
    n = dirs.size
    cur = _state_index(dirs, base)
    backup = np.empty(n, dtype=dirs.dtype)
    for it in range(n_prop):
        a, L = _propose(dirs, block_p, base, backup)
        new = _state_index(dirs, base)
        delta = boundary_of[new] - boundary_of[cur]
        u = np.random.random()
        if delta <= 0 or u < math.exp(-beta_scaled * delta):
            cur = new
        else:
            for j in range(L):
                dirs[a + j] = backup[j]
        counts[cur] += 1
    return counts


@dataclass
class TinyCheck:
    tv: float
    proposals: int
    exact: np.ndarray
    empirical: np.ndarray


def tiny_instance_check(stream: RngStream, d: int = 3, n: int = 6, beta: float = 2.0,
                        proposals: int = 10**8, block_len_mean: float = 3.0, chunk: int = 10**7) -> TinyCheck:
    """Total-variation distance between long-run chain frequencies and exp(-energy)/Z."""
    bnd = enumerate_boundaries(d, n)
    bs = beta / n ** (2.0 / d)
    w = np.exp(-bs * (bnd - bnd.min()))
    exact = w / w.sum()
    counts = np.zeros(len(bnd), dtype=np.int64)
    rng = stream.generator()
    dirs = rng.integers(0, 2 * d, size=n)
    done = 0
    while done < proposals:
        m = min(chunk, proposals - done)
        _tiny_chain(int(rng.integers(0, 2**62)), dirs, 2 * d, m, bs, 1.0 / max(block_len_mean, 1.0), bnd, counts)
        done += m
    emp = counts / counts.sum()
    return TinyCheck(float(0.5 * np.abs(emp - exact).sum()), proposals, exact, emp)
