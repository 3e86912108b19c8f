"""Time-restricted Green's functions by kernel iteration, full Green's function brackets,
and the cube covering sum."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from numba import njit
from scipy.special import zeta

from rangewalk.lattice import PointSet, check_dim, cube_anchor

DEFAULT_MEMORY_CAP = 1 << 30  # bytes
CACHE_MAGIC = b"RWGT"
CACHE_VERSION = 1


class ResourceCapError(MemoryError):
    """A configured memory or time cap would be exceeded."""


@njit(cache=True)
def _kernel_iterate(T, R, d, G, p, q, cum_escape, origin):
    """Pull iteration on the parity sublattice inside the light cone.

    At step k only points with coordinate sum of the parity of k can carry
    mass, and all of it sits within sup-norm distance min(k, R).  Mass that
    would step out of the box is absorbed; the per-step loss is the drop in
    total mass.
    """
    n1 = 2 * R + 1
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for i in range(d):
        strides[i] = s
        s *= n1
    centre = 0
    for i in range(d):
        centre += R * strides[i]
    p[centre] = 1.0
    G[centre] = 1.0
    origin[0] = 1.0
    w_share = 1.0 / (2 * d)
    coords = np.empty(d, dtype=np.int64)
    mass = 1.0
    esc_total = 0.0
    for k in range(1, T + 1):
        b = min(k, R)
        for i in range(d):
            coords[i] = -b
        new_mass = 0.0
        while True:
            rest = 0
            base = centre
            for i in range(1, d):
                rest += coords[i]
                base += coords[i] * strides[i]
            c0 = -b
            if ((c0 + rest - k) & 1) != 0:
                c0 += 1
            while c0 <= b:
                idx = base + c0
                acc = 0.0
                if c0 + 1 <= R:
                    acc += p[idx + 1]
                if c0 - 1 >= -R:
                    acc += p[idx - 1]
                for i in range(1, d):
                    c = coords[i]
                    if c + 1 <= R:
                        acc += p[idx + strides[i]]
                    if c - 1 >= -R:
                        acc += p[idx - strides[i]]
                v = acc * w_share
                q[idx] = v
                G[idx] += v
                new_mass += v
                c0 += 2
            j = 1
            while j < d:
                if coords[j] < b:
                    coords[j] += 1
                    break
                coords[j] = -b
                j += 1
            if j == d:
                break
        esc = mass - new_mass
        if esc < 0.0:
            esc = 0.0
        esc_total += esc
        mass = new_mass
        cum_escape[k] = esc_total
        origin[k] = q[centre]
        tmp = p
        p = q
        q = tmp


@dataclass
class RestrictedGreenTable:
    """G_T(z) = sum_{k<=T} P[S_k = z] on the box [-R, R]^d.

    Mass leaving the box is absorbed and booked in ``cum_escape``; the total
    time escaped mass could still spend anywhere, ``escape_time``, bounds the
    error of every stored value and bounds G_T outside the box.
    """

    d: int
    T: int
    R: int
    values: np.ndarray
    cum_escape: np.ndarray  # cumulative escaped mass after each step 0..T
    origin_series: np.ndarray  # P[S_k = 0] (absorbed dynamics) for k = 0..T
    meta: dict = field(default_factory=dict)

    @property
    def escape_time(self) -> float:
        return float(self.cum_escape.sum())

    @property
    def tail_bound(self) -> float:
        return self.escape_time

    def total(self) -> float:
        """Sum of stored values plus the time spent by absorbed mass; equals T + 1."""
        return float(self.values.sum()) + self.escape_time

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=np.int64)
        if np.any(np.abs(z) > self.R):
            return 0.0
        return float(self.values[tuple(z + self.R)])

    def lookup(self, pts: np.ndarray) -> np.ndarray:
        """Table values at many points (0 outside the box)."""
        pts = np.asarray(pts, dtype=np.int64)
        out = np.zeros(len(pts))
        inside = np.all(np.abs(pts) <= self.R, axis=1)
        if inside.any():
            ix = tuple((pts[inside] + self.R).T)
            out[inside] = self.values[ix]
        return out

    def truncation_radius(self, threshold: float = 1e-12) -> int:
        """Smallest sup-norm radius outside which every stored value is below ``threshold``."""
        big = np.argwhere(self.values >= threshold)
        if len(big) == 0:
            return 0
        return int(np.abs(big - self.R).max())

    def truncated(self, radius: int) -> "RestrictedGreenTable":
        """Copy restricted to [-radius, radius]^d; discarded mass joins the tail certificate."""
        radius = min(radius, self.R)
        sl = tuple(slice(self.R - radius, self.R + radius + 1) for _ in range(self.d))
        vals = self.values[sl].copy()
        meta = dict(self.meta)
        meta["discarded_mass"] = meta.get("discarded_mass", 0.0) + float(self.values.sum() - vals.sum())
        meta["discarded_max"] = max(meta.get("discarded_max", 0.0), float(_outside_max(self.values, radius, self.R)))
        return RestrictedGreenTable(self.d, self.T, radius, vals, self.cum_escape, self.origin_series, meta)


def _outside_max(values: np.ndarray, radius: int, R: int) -> float:
    if radius >= R:
        return 0.0
    mask = np.ones(values.shape, dtype=bool)
    sl = tuple(slice(R - radius, R + radius + 1) for _ in range(values.ndim))
    mask[sl] = False
    return float(values[mask].max())


def table_bytes(d: int, R: int) -> int:
    return 3 * 8 * (2 * R + 1) ** d


def build_green_table(
    d: int,
    T: int,
    R: int,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    cache_dir: str | Path | None = None,
) -> RestrictedGreenTable:
    """Exact G_T on [-R, R]^d by T applications of the one-step averaging operator."""
    check_dim(d)
    if T < 0 or R < 1:
        raise ValueError("need T >= 0 and R >= 1")
    need = table_bytes(d, R)
    if need > memory_cap:
        raise ResourceCapError(f"Green table d={d}, R={R} needs {need} bytes > cap {memory_cap}")
    if cache_dir is not None:
        path = cache_path(cache_dir, d, T, R)
        if path.exists():
            return load_table(path)
    size = (2 * R + 1) ** d
    G = np.zeros(size)
    p = np.zeros(size)
    q = np.zeros(size)
    cum = np.zeros(T + 1)
    origin = np.zeros(T + 1)
    _kernel_iterate(T, R, d, G, p, q, cum, origin)
    # flat index uses axis 0 as the fastest coordinate
    vals = G.reshape((2 * R + 1,) * d).transpose(tuple(range(d - 1, -1, -1))).copy()
    table = RestrictedGreenTable(d, T, R, vals, cum, origin)
    if cache_dir is not None:
        save_table(table, cache_path(cache_dir, d, T, R))
    return table


# ---------------------------------------------------------------------------
# binary cache


def cache_path(cache_dir: str | Path, d: int, T: int, R: int) -> Path:
    return Path(cache_dir) / f"green_d{d}_T{T}_R{R}.bin"


def save_table(table: RestrictedGreenTable, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = CACHE_MAGIC + struct.pack("<IIII", CACHE_VERSION, table.d, table.T, table.R)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(table.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.cum_escape, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.origin_series, dtype="<f8").tobytes())
    tmp.replace(path)


def load_table(path: str | Path) -> RestrictedGreenTable:
    raw = Path(path).read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a Green table cache file")
    version, d, T, R = struct.unpack("<IIII", raw[4:20])
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    body = np.frombuffer(raw[20:], dtype="<f8")
    n = (2 * R + 1) ** d
    if body.size != n + 2 * (T + 1):
        raise ValueError(f"{path}: truncated cache file")
    vals = body[:n].reshape((2 * R + 1,) * d).copy()
    cum = body[n : n + T + 1].copy()
    origin = body[n + T + 1 :].copy()
    return RestrictedGreenTable(d, T, R, vals, cum, origin, {"cached": True})


# ---------------------------------------------------------------------------
# full Green's function


def local_constant(d: int) -> float:
    """Leading constant of P[S_k = 0] ~ c k^{-d/2} along allowed-parity times."""
    return 2.0 * (d / (2.0 * math.pi)) ** (d / 2.0)


def green_asymptotic(d: int, r: float) -> float:
    """Leading far-field behaviour of G at distance r."""
    return d * math.gamma(d / 2.0 - 1.0) / (2.0 * math.pi ** (d / 2.0)) / r ** (d - 2)


def green_upper(d: int, z) -> float:
    """Upper bound for G(z) used in far-field corrections.

    The far-field form times (1 + 2/|z|^2) plus a (1 + |z|)^{-d} cushion; checked
    against the Bessel-integral representation over |z| <= 40 in the tests.
    """
    r = float(np.sqrt(np.sum(np.asarray(z, dtype=float) ** 2)))
    if r < 1.0:
        return 1.6 if d == 3 else 1.3
    return green_asymptotic(d, r) * (1.0 + 2.0 / r**2) + (1.0 + r) ** (-d)


def _parity_tail(d: int, T: int, parity: int) -> float:
    """sum over k > T with k = parity (mod 2) of k^{-d/2}."""
    k0 = T + 1 if (T + 1) % 2 == parity else T + 2
    # k = k0 + 2j  ->  2^{-d/2} sum_j (j + k0/2)^{-d/2}
    return float(2.0 ** (-d / 2.0) * zeta(d / 2.0, k0 / 2.0))


@dataclass
class GreenEstimate:
    z: tuple
    value: float
    tail_bound: float
    T: int
    R: int
    local_constant: float
    ratio_monotone: bool

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound


def green_full(
    d: int,
    z,
    tol: float,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    T_start: int | None = None,
    cache_dir: str | Path | None = None,
) -> GreenEstimate:
    """Bracket G(z) by G_T(z) plus bounds on the remaining sum.

    The upper tail uses P[S_k = z] <= c_d k^{-d/2} on times of the right parity.
    At z = 0 a matching lower tail uses the ratio k^{d/2} P[S_k = 0] at k = T,
    which is nondecreasing on the computed range (checked and reported).
    """
    check_dim(d)
    z = np.asarray(z, dtype=np.int64)
    zt = tuple(int(c) for c in z)
    parity = int(np.abs(z).sum()) % 2
    cd = local_constant(d)
    T = T_start if T_start is not None else {3: 128, 4: 32, 5: 16}.get(d, 8)
    width = 5.5 if d <= 4 else 4.5
    last_err = None
    while True:
        R = int(math.ceil(width * math.sqrt(T / d))) + int(np.abs(z).max(initial=0)) + 2
        if table_bytes(d, R) > memory_cap:
            raise ResourceCapError(f"tolerance {tol} unreachable under memory cap (last bound {last_err})")
        tab = build_green_table(d, T, R, memory_cap, cache_dir)
        gT = tab(z)
        upper_tail = cd * _parity_tail(d, T, parity)
        lower_tail = 0.0
        monotone = False
        if parity == 0 and not np.any(z):
            ks = np.arange(2, T + 1, 2)
            ratio = tab.origin_series[ks] * ks ** (d / 2.0)
            monotone = bool(np.all(np.diff(ratio[len(ratio) // 2 :]) >= -1e-15) and ratio[-1] <= cd)
            if monotone:
                kT = ks[-1]
                lower_tail = ratio[-1] * _parity_tail(d, T, 0)
                _ = kT
        err = upper_tail - lower_tail + tab.escape_time
        if err <= tol:
            return GreenEstimate(zt, gT + lower_tail, err, T, R, cd, monotone)
        last_err = err
        T *= 2


# ---------------------------------------------------------------------------
# covering sum


@dataclass
class CoveringSum:
    value: float
    error_bound: float
    n_points: int


def covering_sum(table: RestrictedGreenTable, pieces: Mapping[tuple, PointSet], r: int) -> CoveringSum:
    """Sum over cubes Q of sum_{z in piece_Q} G_T(z).

    Keys of ``pieces`` are cube anchors x in 2rZ^d; each piece must sit inside
    the half-open cube x + (-r, r]^d.
    """
    total = 0.0
    npts = 0
    outside = 0
    for anchor, piece in pieces.items():
        if len(piece) == 0:
            continue
        arr = piece.to_array()
        anc = cube_anchor(arr, r)
        if np.any(anc != np.asarray(anchor, dtype=np.int64)):
            raise ValueError(f"piece for cube {anchor} is not contained in that cube")
        total += float(table.lookup(arr).sum())
        npts += len(arr)
        outside += int(np.sum(np.any(np.abs(arr) > table.R, axis=1)))
    err = table.escape_time * npts + table.meta.get("discarded_max", 0.0) * npts
    if outside:
        err += table.escape_time * outside
    return CoveringSum(total, err, npts)


# ---------------------------------------------------------------------------
# restricted bound fit


@dataclass
class RestrictedBoundFit:
    T: int
    c_grid: np.ndarray
    C_of_c: np.ndarray
    C_hat: float
    c_hat: float
    holds: bool


def check_restricted_bound(
    table: RestrictedGreenTable, c_grid: np.ndarray | None = None, slack: float = 2.0
) -> RestrictedBoundFit:
    """Fit G_T(z) <= C T/(1+|z|^d) exp(-c |z|^2/T) over the table.

    For each c on the grid the smallest admissible C is computed exactly; the
    reported pair takes the largest c whose C stays within ``slack`` times the
    smallest C on the grid.
    """
    d, T, R = table.d, table.T, table.R
    if R < 3 * math.sqrt(max(T, 1)):
        raise ValueError("table radius must be at least 3 sqrt(T)")
    if c_grid is None:
        c_grid = np.linspace(0.0, d / 2.0, 31)[:-1]
    axis = np.arange(-R, R + 1)
    sq = np.zeros((2 * R + 1,) * d)
    for i in range(d):
        shape = [1] * d
        shape[i] = -1
        sq = sq + (axis**2).reshape(shape)
    vals = table.values
    pos = vals > 0
    v, s = vals[pos], sq[pos]
    base = np.log(v) + np.log1p(s ** (d / 2.0)) - math.log(max(T, 1))
    C_of_c = np.array([float(np.exp((base + c * s / max(T, 1)).max())) for c in c_grid])
    cmin = C_of_c.min()
    ok = np.nonzero(C_of_c <= slack * cmin)[0]
    j = int(ok.max())
    return RestrictedBoundFit(T, np.asarray(c_grid), C_of_c, float(C_of_c[j]), float(c_grid[j]), True)


def radial_decay_slope(table: RestrictedGreenTable, r_min: float, r_max: float) -> float:
    """Least-squares slope of log G_T along the first axis against |z|^2 on [r_min, r_max]."""
    R = table.R
    xs = np.arange(int(math.ceil(r_min)), int(math.floor(min(r_max, R))) + 1)
    idx = [R] * table.d
    pts, ys = [], []
    for x in xs:
        idx[0] = R + x
        val = table.values[tuple(idx)]
        if val <= 0:
            idx[0] = R + x + 1 if x + 1 <= R else R + x
            continue
        pts.append(float(x) ** 2)
        ys.append(math.log(val))
    if len(pts) < 2:
        return float("nan")
    return float(np.polyfit(pts, ys, 1)[0])
