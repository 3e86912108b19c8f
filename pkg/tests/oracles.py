"""Independent brute-force oracles.

Nothing here imports the package's numerics: every oracle is written from the
definitions with plain Python sets, dicts and integer arithmetic (scipy only
for the Bessel integral), so agreement is a genuine two-route check.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy import integrate, special


def steps(d):
    out = []
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            out.append(tuple(e))
    return out


def path_counts(d: int, k: int) -> dict:
    """Number of k-step paths from 0 ending at each z, by exhaustive recursion over step sequences.

    Memoised on (position, remaining), which is still a literal path count.
    """
    st = steps(d)
    cache: dict = {}

    def count(pos, left):
        if left == 0:
            return {pos: 1}
        key = (pos, left)
        if key not in cache:
            acc: dict = {}
            for e in st:
                nxt = tuple(a + b for a, b in zip(pos, e))
                for z, c in count(nxt, left - 1).items():
                    acc[z] = acc.get(z, 0) + c
            cache[key] = acc
        return cache[key]

    return count((0,) * d, k)


def green_exact(d: int, T: int) -> dict:
    """G_T(z) as exact fractions: sum_k (#k-step paths to z) / (2d)^k."""
    out: dict = {}
    for k in range(T + 1):
        den = (2 * d) ** k
        for z, c in path_counts(d, k).items():
            out[z] = out.get(z, Fraction(0)) + Fraction(c, den)
    return out


def green_origin_bessel(d: int = 3) -> float:
    """G(0) = int_0^inf e^{-t} I_0(t/d)^d dt (continuous-time representation)."""
    f = lambda t: special.ive(0, t / d) ** d  # noqa: E731
    val, _ = integrate.quad(f, 0, np.inf, limit=500, epsabs=1e-12, epsrel=1e-12)
    return val


def walk_points(dirs, d):
    st = steps(d)
    pos = (0,) * d
    pts = [pos]
    for j in dirs:
        pos = tuple(a + b for a, b in zip(pos, st[j]))
        pts.append(pos)
    return pts


def boundary_size(points, d) -> int:
    s = set(map(tuple, points))
    st = steps(d)
    return sum(1 for z in s if any(tuple(a + b for a, b in zip(z, e)) not in s for e in st))


def ball_offsets(d, r):
    k = int(math.floor(r + 1e-12))
    return [p for p in itertools.product(range(-k, k + 1), repeat=d) if sum(c * c for c in p) <= r * r + 1e-9]


def window_counts(points, v, r, n):
    """l_k(S_k + B(v, r)) for k = 0..n by recounting from scratch at every k."""
    pts = [tuple(p) for p in points[: n + 1]]
    out = []
    for k in range(n + 1):
        c = tuple(a + b for a, b in zip(pts[k], v))
        rr = r * r + 1e-9
        out.append(sum(1 for q in pts[: k + 1] if sum((a - b) ** 2 for a, b in zip(q, c)) <= rr))
    return out


def xi_double_loop(points, n, T, green):
    """(1/T) sum_{k=1}^n sum_{z in R_k^{++}} G_T(z - S_k) with G_T supplied as a dict."""
    d = len(points[0])
    st = steps(d)
    rng: set = set()
    total = 0.0
    for k in range(n + 1):
        rng.add(tuple(points[k]))
        if k == 0:
            continue
        dil = set(rng)
        for _ in range(2):
            dil |= {tuple(a + b for a, b in zip(z, e)) for z in dil for e in st}
        s = tuple(points[k])
        total += sum(green.get(tuple(a - b for a, b in zip(z, s)), 0.0) for z in dil)
    return total / T


def boundary_distribution(d: int, n: int) -> dict:
    """Exact law of |dR_n| by enumerating all (2d)^n step sequences."""
    out: dict = {}
    for dirs in itertools.product(range(2 * d), repeat=n):
        b = boundary_size(walk_points(dirs, d), d)
        out[b] = out.get(b, 0) + 1
    return out


def confinement_mc(d, n, rho, walks, seed):
    rng = np.random.default_rng(seed)
    st = np.array(steps(d))
    dirs = rng.integers(0, 2 * d, size=(walks, n))
    paths = np.cumsum(st[dirs], axis=1)
    inside = ((paths**2).sum(axis=2) <= rho * rho + 1e-9).all(axis=1)
    return float(inside.mean()), float(inside.std(ddof=1) / math.sqrt(walks))


def escape_fraction(d, walks, horizon, seed):
    """Fraction of walks from 0 that do not return to 0 within the horizon."""
    rng = np.random.default_rng(seed)
    st = np.array(steps(d))
    esc = 0
    for _ in range(walks // 1000):
        dirs = rng.integers(0, 2 * d, size=(1000, horizon))
        paths = np.cumsum(st[dirs], axis=1)
        back = (np.abs(paths).sum(axis=2) == 0).any(axis=1)
        esc += int((~back).sum())
    return esc / walks


def window_counts_np(points, v, r, n, chunk=256):
    """Same as window_counts, vectorised over a time-by-time distance matrix."""
    P = np.asarray(points[: n + 1], dtype=np.int64)
    C = P + np.asarray(v, dtype=np.int64)
    out = np.empty(n + 1, dtype=np.int64)
    idx = np.arange(n + 1)
    for a in range(0, n + 1, chunk):
        b = min(a + chunk, n + 1)
        d2 = ((C[a:b, None, :] - P[None, :, :]) ** 2).sum(axis=2)
        ok = (d2 <= r * r + 1e-9) & (idx[None, :] <= idx[a:b, None])
        out[a:b] = ok.sum(axis=1)
    return out
