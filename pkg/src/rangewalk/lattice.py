"""Lattice geometry, random streams and walk generation on Z^d."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from rangewalk import _hashset as hs

Point = tuple[int, ...]


@dataclass(frozen=True)
class RngStream:
    """Random stream keyed by a root seed and a stream index.

    Backed by numpy's counter-based Philox generator seeded through
    ``SeedSequence(seed, spawn_key=(index, *path))``, so distinct keys give
    independent streams regardless of the order in which replicas run.
    """

    seed: int
    index: int = 0
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.index, *self.path))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, j: int) -> "RngStream":
        return RngStream(self.seed, self.index, self.path + (int(j),))

    def replica(self, index: int) -> "RngStream":
        return RngStream(self.seed, int(index), self.path)


def check_dim(d: int) -> None:
    if d < 3:
        raise ValueError(f"dimension must be at least 3, got {d}")


def unit_steps(d: int) -> np.ndarray:
    """The 2d unit vectors in the order +e1, -e1, ..., +ed, -ed."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


def unit_neighbors(p: Iterable[int]) -> list[Point]:
    p = tuple(int(c) for c in p)
    d = len(p)
    check_dim(d)
    out = []
    for i in range(d):
        for s in (1, -1):
            q = list(p)
            q[i] += s
            out.append(tuple(q))
    return out


@dataclass(frozen=True)
class PointSet:
    """Finite subset of Z^d with hashed membership."""

    d: int
    elements: frozenset = field(default_factory=frozenset)

    @classmethod
    def of(cls, d: int, points: Iterable[Iterable[int]]) -> "PointSet":
        return cls(d, frozenset(tuple(int(c) for c in p) for p in points))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PointSet":
        arr = np.asarray(arr, dtype=np.int64)
        return cls(arr.shape[1], frozenset(map(tuple, arr.tolist())))

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, p) -> bool:
        return tuple(p) in self.elements

    def __iter__(self) -> Iterator[Point]:
        return iter(self.elements)

    def to_array(self) -> np.ndarray:
        if not self.elements:
            return np.zeros((0, self.d), dtype=np.int64)
        return np.array(sorted(self.elements), dtype=np.int64)

    def keys(self) -> np.ndarray:
        return hs.encode(self.to_array())

    def _same(self, other: "PointSet") -> None:
        if other.d != self.d:
            raise ValueError("point sets live in different dimensions")

    def __or__(self, other: "PointSet") -> "PointSet":
        self._same(other)
        return PointSet(self.d, self.elements | other.elements)

    def __and__(self, other: "PointSet") -> "PointSet":
        self._same(other)
        return PointSet(self.d, self.elements & other.elements)

    def __sub__(self, other: "PointSet") -> "PointSet":
        self._same(other)
        return PointSet(self.d, self.elements - other.elements)

    def __le__(self, other: "PointSet") -> bool:
        return self.elements <= other.elements

    def translate(self, v: Iterable[int]) -> "PointSet":
        v = tuple(int(c) for c in v)
        return PointSet(self.d, frozenset(tuple(a + b for a, b in zip(p, v)) for p in self.elements))

    def radius(self) -> float:
        """Largest Euclidean norm of an element."""
        if not self.elements:
            return 0.0
        arr = self.to_array()
        return float(np.sqrt((arr**2).sum(axis=1).max()))

    def diameter(self) -> float:
        arr = self.to_array()
        if len(arr) < 2:
            return 0.0
        span = arr.max(axis=0) - arr.min(axis=0)
        return float(np.sqrt((span**2).sum()))


@dataclass(frozen=True)
class Trajectory:
    """Nearest-neighbour path S_0..S_n stored as an (n+1, d) int64 array."""

    d: int
    points: np.ndarray
    seed: int = 0
    index: int = 0

    @property
    def n(self) -> int:
        return self.points.shape[0] - 1

    def keys(self) -> np.ndarray:
        return hs.encode(self.points)

    def steps(self) -> np.ndarray:
        return np.diff(self.points, axis=0)

    def is_valid(self) -> bool:
        st = self.steps()
        return bool(np.all(np.abs(st).sum(axis=1) == 1))

    def prefix(self, n: int) -> "Trajectory":
        return Trajectory(self.d, self.points[: n + 1], self.seed, self.index)


def path_from_directions(d: int, dirs: np.ndarray, start=None) -> np.ndarray:
    """Positions reached by the direction indices ``dirs`` (values in 0..2d-1)."""
    steps = unit_steps(d)[np.asarray(dirs, dtype=np.int64)]
    pts = np.zeros((len(dirs) + 1, d), dtype=np.int64)
    np.cumsum(steps, axis=0, out=pts[1:])
    if start is not None:
        pts += np.asarray(start, dtype=np.int64)
    return pts


def generate_walk(stream: RngStream, d: int, n: int, start=None) -> Trajectory:
    check_dim(d)
    if n < 0:
        raise ValueError("walk length must be nonnegative")
    dirs = stream.generator().integers(0, 2 * d, size=n)
    return Trajectory(d, path_from_directions(d, dirs, start), stream.seed, stream.index)


def ball_offsets(d: int, r: float) -> np.ndarray:
    """All z in Z^d with ||z|| <= r, as an (m, d) array sorted by norm then lexicographically."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    k = int(math.floor(r + 1e-12))
    axis = np.arange(-k, k + 1, dtype=np.int64)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    sq = (pts**2).sum(axis=1)
    keep = sq <= r * r + 1e-9
    pts, sq = pts[keep], sq[keep]
    order = np.lexsort(tuple(pts[:, i] for i in range(d - 1, -1, -1)) + (sq,))
    return pts[order]


def euclidean_ball(center: Iterable[int], r: float) -> PointSet:
    c = np.asarray(tuple(center), dtype=np.int64)
    check_dim(len(c))
    return PointSet.from_array(ball_offsets(len(c), r) + c)


def cube_anchor(z: np.ndarray, r: int) -> np.ndarray:
    """The x in 2rZ^d with z in the half-open cube x + (-r, r]^d."""
    z = np.asarray(z, dtype=np.int64)
    return 2 * r * (-((-(z - r)) // (2 * r)))


def cube(x: Iterable[int], r: int) -> PointSet:
    """Half-open cube (x + (-r, r]^d) intersected with Z^d."""
    x = np.asarray(tuple(x), dtype=np.int64)
    axis = np.arange(-r + 1, r + 1, dtype=np.int64)
    grids = np.meshgrid(*([axis] * len(x)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1) + x
    return PointSet.from_array(pts)
