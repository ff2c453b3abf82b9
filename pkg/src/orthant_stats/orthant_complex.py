"""Orthant spaces: strata, compatibility, incidence and points."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

SNAP_TOL = 1e-12

AxisSet = frozenset


class OrthantError(Exception):
    """Base class for errors raised by this package."""


class FlagViolation(OrthantError):
    def __init__(self, axes: Iterable[int]):
        self.axes = frozenset(axes)
        super().__init__(
            f"all 2-faces of orthant {sorted(self.axes)} are present but the orthant is not"
        )


class AxisOutOfRange(OrthantError):
    pass


class InvalidPoint(OrthantError):
    pass


def axis_set(axes: Iterable[int]) -> frozenset:
    return frozenset(int(a) for a in axes)


@dataclass(frozen=True, eq=False)
class Point:
    """A point of an orthant space stored as a dense, snapped coordinate vector.

    Coordinates below ``SNAP_TOL`` are set to exactly zero so that the
    supporting orthant is a discrete, testable property.
    """

    values: np.ndarray
    support: frozenset = field(init=False)
    squares: tuple = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if np.any(~np.isfinite(v)):
            raise InvalidPoint("coordinates must be finite")
        if np.any(v < -SNAP_TOL):
            raise InvalidPoint("coordinates must be nonnegative")
        v[v < SNAP_TOL] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "support", frozenset(np.flatnonzero(v).tolist()))
        object.__setattr__(self, "squares", tuple((v * v).tolist()))

    @classmethod
    def from_coords(cls, coords: Mapping[int, float], ambient_dim: int) -> "Point":
        v = np.zeros(ambient_dim)
        for axis, value in coords.items():
            axis = int(axis)
            if not 0 <= axis < ambient_dim:
                raise AxisOutOfRange(f"axis {axis} outside [0, {ambient_dim})")
            v[axis] = value
        return cls(v)

    @classmethod
    def origin(cls, ambient_dim: int) -> "Point":
        return cls(np.zeros(ambient_dim))

    @property
    def ambient_dim(self) -> int:
        return self.values.shape[0]

    @property
    def coords(self) -> dict[int, float]:
        return {a: float(self.values[a]) for a in sorted(self.support)}

    @property
    def is_origin(self) -> bool:
        return not self.support

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def scaled(self, factor: float) -> "Point":
        return Point(self.values * factor)

    def __eq__(self, other):
        if not isinstance(other, Point):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"Point({self.coords})"


@dataclass(frozen=True)
class OrthantSpace:
    ambient_dim: int
    strata: frozenset
    maximal: tuple
    # memo for structural queries; never affects equality or hashing
    cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    @property
    def max_dim(self) -> int:
        return max(len(s) for s in self.strata)

    def is_stratum(self, axes: Iterable[int]) -> bool:
        return frozenset(axes) in self.strata

    def compatible(self, first: Iterable[int], second: Iterable[int]) -> bool:
        return frozenset(first) | frozenset(second) in self.strata

    def point(self, coords: Mapping[int, float] | np.ndarray | Point) -> Point:
        """Build a point and check that it lies in this space."""
        if isinstance(coords, Point):
            p = coords
        elif isinstance(coords, Mapping):
            p = Point.from_coords(coords, self.ambient_dim)
        else:
            p = Point(coords)
        if p.ambient_dim != self.ambient_dim:
            raise InvalidPoint(
                f"point has dimension {p.ambient_dim}, space has {self.ambient_dim}"
            )
        if p.support not in self.strata:
            raise InvalidPoint(f"support {sorted(p.support)} is not a stratum")
        return p

    def contains(self, p: Point) -> bool:
        return p.ambient_dim == self.ambient_dim and p.support in self.strata

    def origin(self) -> Point:
        return Point.origin(self.ambient_dim)


def _maximal_cliques(adjacency: dict[int, set[int]]) -> list[frozenset]:
    # Bron-Kerbosch with pivoting
    out = []

    def expand(r, p, x):
        if not p and not x:
            out.append(frozenset(r))
            return
        pivot = max(p | x, key=lambda u: len(adjacency[u] & p))
        for v in list(p - adjacency[pivot]):
            expand(r | {v}, p & adjacency[v], x & adjacency[v])
            p = p - {v}
            x = x | {v}

    expand(set(), set(adjacency), set())
    return out


def build_space(ambient_dim: int, maximal_orthants: Iterable[Iterable[int]]) -> OrthantSpace:
    """Close the given orthants under faces and check the flag condition.

    Raises FlagViolation carrying the smallest offending axis set if a set of
    pairwise compatible axes does not span an orthant of the space.
    """
    if ambient_dim < 0:
        raise AxisOutOfRange("ambient dimension must be nonnegative")
    tops = []
    for orthant in maximal_orthants:
        s = axis_set(orthant)
        bad = [a for a in s if not 0 <= a < ambient_dim]
        if bad:
            raise AxisOutOfRange(f"axes {sorted(bad)} outside [0, {ambient_dim})")
        tops.append(s)

    strata = {frozenset()}
    for s in tops:
        items = sorted(s)
        for size in range(len(items) + 1):
            strata.update(frozenset(c) for c in combinations(items, size))

    adjacency = {a: set() for s in strata if len(s) == 1 for a in s}
    for s in strata:
        if len(s) == 2:
            a, b = s
            adjacency[a].add(b)
            adjacency[b].add(a)
    for clique in _maximal_cliques(adjacency):
        if clique not in strata:
            # report a minimal missing sub-clique
            for size in range(3, len(clique) + 1):
                for sub in combinations(sorted(clique), size):
                    if frozenset(sub) not in strata:
                        raise FlagViolation(sub)

    maximal = tuple(
        sorted(
            (s for s in strata if not any(s < t for t in strata)),
            key=lambda s: (len(s), sorted(s)),
        )
    )
    return OrthantSpace(ambient_dim, frozenset(strata), maximal)


def compatible(space: OrthantSpace, first: Iterable[int], second: Iterable[int]) -> bool:
    return space.compatible(first, second)


def common_axes(space: OrthantSpace, x1: Point, x2: Point) -> frozenset:
    """Axes shared by every stratum along the geodesic from x1 to x2."""
    e1, e2 = x1.support, x2.support
    out = set(e1 & e2)
    out.update(e for e in e1 - e2 if space.is_stratum(e2 | {e}))
    out.update(e for e in e2 - e1 if space.is_stratum(e1 | {e}))
    return frozenset(out)


def cobounding_strata(space: OrthantSpace, axes: Iterable[int]) -> list[frozenset]:
    axes = frozenset(axes)
    found = [s for s in space.strata if axes < s]
    return sorted(found, key=lambda s: (len(s), sorted(s)))


def bounding_strata(space: OrthantSpace, axes: Iterable[int]) -> list[frozenset]:
    axes = frozenset(axes)
    found = [s for s in space.strata if s < axes]
    return sorted(found, key=lambda s: (len(s), sorted(s)))


def local_codimension(space: OrthantSpace, axes: Iterable[int]) -> int:
    axes = frozenset(axes)
    top = max(len(s) for s in space.strata if axes <= s)
    return top - len(axes)
