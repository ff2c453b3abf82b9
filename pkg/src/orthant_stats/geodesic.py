"""Geodesic supports, distances and points along geodesics.

A support is a pair of sequences (A_0..A_k), (B_0..B_k) of axis sets. A_0 = B_0
holds the axes that stay positive along the whole geodesic; leg i shrinks the
axes of A_i to zero and grows those of B_i.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterator

import numpy as np

from .orthant_complex import OrthantError, OrthantSpace, Point, common_axes

RATIO_RTOL = 1e-10


class NoSupportFound(OrthantError):
    pass


class MalformedSupport(OrthantError):
    pass


class ParameterOutOfRange(OrthantError):
    pass


class BudgetExceeded(OrthantError):
    pass


def _sorted(s) -> list[int]:
    return sorted(s)


@dataclass(frozen=True)
class GeodesicSupport:
    A: tuple
    B: tuple

    @property
    def k(self) -> int:
        return len(self.A) - 1

    @property
    def common(self) -> frozenset:
        return self.A[0]

    def legs(self) -> list[tuple[frozenset, frozenset]]:
        return list(zip(self.A[1:], self.B[1:]))

    def carrier(self) -> list[frozenset]:
        """Orthants crossed with positive length, in order."""
        out = []
        for i in range(self.k + 1):
            axes = set(self.A[0])
            for j in range(1, i + 1):
                axes |= self.B[j]
            for j in range(i + 1, self.k + 1):
                axes |= self.A[j]
            out.append(frozenset(axes))
        return out

    def reversed(self) -> "GeodesicSupport":
        return GeodesicSupport(
            (self.B[0],) + tuple(reversed(self.B[1:])),
            (self.A[0],) + tuple(reversed(self.A[1:])),
        )

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "A": [_sorted(a) for a in self.A],
            "B": [_sorted(b) for b in self.B],
        }


@dataclass(frozen=True)
class Geodesic:
    x1: Point
    x2: Point
    support: GeodesicSupport
    length: float
    breakpoints: tuple


def _norm(p: Point, axes) -> float:
    sq = p.squares
    return math.sqrt(sum(sq[i] for i in axes))


def _check_shape(space: OrthantSpace, support: GeodesicSupport) -> None:
    if len(support.A) != len(support.B) or not support.A:
        raise MalformedSupport("A and B must have the same positive length")
    if support.A[0] != support.B[0]:
        raise MalformedSupport("A_0 and B_0 must coincide")
    seen = set(support.A[0])
    for part in list(support.A[1:]) + list(support.B[1:]):
        if not part:
            raise MalformedSupport("legs must be nonempty")
        if seen & part:
            raise MalformedSupport("axis sets must be mutually disjoint")
        seen |= part
    for orthant in support.carrier():
        if not space.is_stratum(orthant):
            raise MalformedSupport(f"carrier orthant {sorted(orthant)} is not a stratum")


def _increasing(left: float, right: float, rtol: float) -> bool:
    return right - left > rtol * max(abs(left), abs(right))


def _at_least(left: float, right: float, rtol: float) -> bool:
    return left - right >= -rtol * max(abs(left), abs(right))


def _proper_splits(axes: frozenset) -> Iterator[tuple[frozenset, frozenset]]:
    items = sorted(axes)
    for size in range(1, len(items)):
        for first in combinations(items, size):
            first = frozenset(first)
            yield first, axes - first


def _leg_split_ok(space, x1, x2, support, i, rtol) -> bool:
    """Check that no split of leg i would shorten the geodesic."""
    A, B = support.A, support.B
    k = support.k
    before = set(A[0])
    for j in range(1, i):
        before |= B[j]
    after = set()
    for j in range(i + 1, k + 1):
        after |= A[j]
    for c1, c2 in _proper_splits(A[i]):
        for d1, d2 in _proper_splits(B[i]):
            mid = frozenset(before | d1 | c2 | after)
            if not space.is_stratum(mid):
                continue
            lhs = _norm(x1, c1) / _norm(x2, d1)
            rhs = _norm(x1, c2) / _norm(x2, d2)
            if not _at_least(lhs, rhs, rtol):
                return False
    return True


def validate_support(
    space: OrthantSpace,
    x1: Point,
    x2: Point,
    support: GeodesicSupport,
    rtol: float = RATIO_RTOL,
) -> bool:
    """Decide whether ``support`` is the support of the geodesic x1 -> x2.

    Ratio comparisons use relative tolerance ``rtol``; at an exact tie the
    merged leg is accepted and the split one rejected.
    """
    _check_shape(space, support)
    if support.A[0] != common_axes(space, x1, x2):
        return False
    e1 = frozenset().union(*support.A[1:]) if support.k else frozenset()
    e2 = frozenset().union(*support.B[1:]) if support.k else frozenset()
    if e1 != x1.support - support.A[0] or e2 != x2.support - support.A[0]:
        return False
    ratios = [
        _norm(x1, a) / _norm(x2, b) for a, b in support.legs()
    ]
    for left, right in zip(ratios, ratios[1:]):
        if not _increasing(left, right, rtol):
            return False
    return all(
        _leg_split_ok(space, x1, x2, support, i, rtol)
        for i in range(1, support.k + 1)
    )


def _nonempty_subsets(axes: frozenset) -> Iterator[frozenset]:
    items = sorted(axes)
    for size in range(1, len(items) + 1):
        for c in combinations(items, size):
            yield frozenset(c)


@dataclass(frozen=True)
class _Layout:
    """Support shape plus the leg splits whose middle orthant is a stratum."""

    support: GeodesicSupport
    splits: tuple


def _split_table(space: OrthantSpace, support: GeodesicSupport) -> tuple:
    A, B = support.A, support.B
    table = []
    for i in range(1, support.k + 1):
        before = set(A[0]).union(*B[1:i])
        after = set().union(*A[i + 1 :])
        for c1, c2 in _proper_splits(A[i]):
            for d1, d2 in _proper_splits(B[i]):
                if space.is_stratum(frozenset(before | d1 | c2 | after)):
                    table.append((c1, c2, d1, d2))
    return tuple(table)


def _layouts(space: OrthantSpace, e1: frozenset, e2: frozenset) -> list[_Layout]:
    """All ordered partitions with every carrier orthant a stratum, fewest legs first."""
    key = ("layouts", e1, e2)
    if key in space.cache:
        return space.cache[key]
    common = set(e1 & e2)
    common.update(e for e in e1 - e2 if space.is_stratum(e2 | {e}))
    common.update(e for e in e2 - e1 if space.is_stratum(e1 | {e}))
    common = frozenset(common)
    rest1, rest2 = e1 - common, e2 - common
    found = []
    if not rest1 and not rest2:
        found.append(GeodesicSupport((common,), (common,)))

    def extend(left1, left2, born, legs):
        if not left1 and not left2:
            found.append(
                GeodesicSupport(
                    (common,) + tuple(a for a, _ in legs),
                    (common,) + tuple(b for _, b in legs),
                )
            )
            return
        if not left1 or not left2:
            return
        for a in _nonempty_subsets(left1):
            for b in _nonempty_subsets(left2):
                if space.is_stratum(common | born | b | (left1 - a)):
                    extend(left1 - a, left2 - b, born | b, legs + [(a, b)])

    if rest1 and rest2:
        extend(rest1, rest2, frozenset(), [])
    found.sort(key=lambda sup: sup.k)
    layouts = [_Layout(sup, _split_table(space, sup)) for sup in found]
    space.cache[key] = layouts
    return layouts


def _admissible(layout: _Layout, n1, n2, rtol: float) -> bool:
    ratios = [n1(a) / n2(b) for a, b in layout.support.legs()]
    for left, right in zip(ratios, ratios[1:]):
        if not _increasing(left, right, rtol):
            return False
    for c1, c2, d1, d2 in layout.splits:
        if not _at_least(n1(c1) / n2(d1), n1(c2) / n2(d2), rtol):
            return False
    return True


def candidate_supports(
    space: OrthantSpace, x1: Point, x2: Point, rtol: float = RATIO_RTOL
) -> Iterator[GeodesicSupport]:
    """Ordered partitions with carriers in the space and strictly increasing
    leg ratios, fewest legs first."""
    n1 = lru_cache(maxsize=None)(lambda axes: _norm(x1, axes))
    n2 = lru_cache(maxsize=None)(lambda axes: _norm(x2, axes))
    for layout in _layouts(space, x1.support, x2.support):
        ratios = [n1(a) / n2(b) for a, b in layout.support.legs()]
        if all(_increasing(l, r, rtol) for l, r in zip(ratios, ratios[1:])):
            yield layout.support


def find_support(
    space: OrthantSpace, x1: Point, x2: Point, rtol: float = RATIO_RTOL
) -> GeodesicSupport:
    """Support of the geodesic from x1 to x2; at ties the one with fewest legs."""
    cache1: dict = {}
    cache2: dict = {}

    def n1(axes):
        if axes not in cache1:
            cache1[axes] = _norm(x1, axes)
        return cache1[axes]

    def n2(axes):
        if axes not in cache2:
            cache2[axes] = _norm(x2, axes)
        return cache2[axes]

    # The ratio conditions are necessary but in some spaces more than one
    # layout passes them. Each passing layout is a realizable path, so the
    # shortest one is the geodesic.
    best, best_cost = None, math.inf
    for layout in _layouts(space, x1.support, x2.support):
        if not _admissible(layout, n1, n2, rtol):
            continue
        cost = sum((n1(a) + n2(b)) ** 2 for a, b in layout.support.legs())
        if cost < best_cost * (1 - 1e-12):
            best, best_cost = layout.support, cost
    if best is None:
        raise NoSupportFound(f"no valid support between {x1} and {x2}")
    return best


def support_length(x1: Point, x2: Point, support: GeodesicSupport) -> float:
    common = _sorted(support.A[0])
    total = float(np.sum((x2.values[common] - x1.values[common]) ** 2)) if common else 0.0
    for a, b in support.legs():
        total += (_norm(x1, a) + _norm(x2, b)) ** 2
    return math.sqrt(total)


def distance(space: OrthantSpace, x1: Point, x2: Point) -> float:
    return support_length(x1, x2, find_support(space, x1, x2))


def _point_on(x1: Point, x2: Point, support: GeodesicSupport, t: float) -> np.ndarray:
    v = np.zeros(x1.ambient_dim)
    common = _sorted(support.A[0])
    if common:
        v[common] = (1 - t) * x1.values[common] + t * x2.values[common]
    for a, b in support.legs():
        na, nb = _norm(x1, a), _norm(x2, b)
        # position along the unfolded leg, which runs from -na to +nb
        pos = t * (na + nb) - na
        if pos < 0:
            idx = _sorted(a)
            v[idx] = x1.values[idx] * (-pos / na)
        elif pos > 0:
            idx = _sorted(b)
            v[idx] = x2.values[idx] * (pos / nb)
    return v


def geodesic(space: OrthantSpace, x1: Point, x2: Point) -> Geodesic:
    support = find_support(space, x1, x2)
    breaks = []
    for a, b in support.legs():
        na, nb = _norm(x1, a), _norm(x2, b)
        s = na / (na + nb)
        breaks.append((s, Point(_point_on(x1, x2, support, s))))
    return Geodesic(x1, x2, support, support_length(x1, x2, support), tuple(breaks))


def eval_geodesic(space: OrthantSpace, x1: Point, x2: Point, t: float) -> Point:
    if not 0.0 <= t <= 1.0:
        raise ParameterOutOfRange(f"t={t} outside [0, 1]")
    if t == 0.0:
        return x1
    if t == 1.0:
        return x2
    return Point(_point_on(x1, x2, find_support(space, x1, x2), t))


# ---------------------------------------------------------------------------
# brute-force oracle


def _restricted_cells(space: OrthantSpace, axes: frozenset) -> list[frozenset]:
    cells = {s & axes for s in space.maximal}
    return sorted(
        (c for c in cells if not any(c < d for d in cells)),
        key=lambda c: (len(c), sorted(c)),
    )


def carrier_sequences(
    space: OrthantSpace, x1: Point, x2: Point, max_carrier_len: int, budget: int = 200_000
) -> list[tuple[frozenset, ...]]:
    """Sequences of closed cells a shortest path may pass through.

    Axes only in x1 must occupy a prefix of the sequence, axes only in x2 a
    suffix, and shared axes every cell.
    """
    e1, e2 = x1.support, x2.support
    cells = _restricted_cells(space, e1 | e2)
    shared = e1 & e2
    only1, only2 = e1 - e2, e2 - e1
    out = []

    def consistent(seq) -> bool:
        for e in only1:
            flags = [e in c for c in seq]
            if False in flags and True in flags[flags.index(False):]:
                return False
        for e in only2:
            flags = [e in c for c in seq]
            if True in flags and False in flags[flags.index(True):]:
                return False
        return True

    def grow(seq):
        if len(out) > budget:
            raise BudgetExceeded(f"more than {budget} carrier sequences")
        if e2 <= seq[-1]:
            out.append(tuple(seq))
        if len(seq) >= max_carrier_len:
            return
        for c in cells:
            if c in seq or not shared <= c:
                continue
            nxt = seq + [c]
            if consistent(nxt):
                grow(nxt)

    for c in cells:
        if e1 <= c and shared <= c:
            grow([c])
    return out


_PROBLEM_CACHE: dict = {}


def _path_problem(ambient_dim: int, seq: tuple):
    key = (ambient_dim, seq)
    if key in _PROBLEM_CACHE:
        return _PROBLEM_CACHE[key]
    import cvxpy as cp

    start = cp.Parameter(ambient_dim)
    end = cp.Parameter(ambient_dim)
    joints = []
    constraints = []
    for left, right in zip(seq, seq[1:]):
        allowed = _sorted(left & right)
        if allowed:
            var = cp.Variable(len(allowed), nonneg=True)
            mat = np.zeros((ambient_dim, len(allowed)))
            mat[allowed, range(len(allowed))] = 1.0
            joints.append(mat @ var)
        else:
            joints.append(np.zeros(ambient_dim))
    nodes = [start] + joints + [end]
    length = sum(cp.norm(nodes[j + 1] - nodes[j]) for j in range(len(nodes) - 1))
    problem = cp.Problem(cp.Minimize(length), constraints)
    _PROBLEM_CACHE[key] = (problem, start, end)
    return _PROBLEM_CACHE[key]


def brute_force_distance(
    space: OrthantSpace, x1: Point, x2: Point, max_carrier_len: int = 6
) -> float:
    """Shortest piecewise-linear path over all admissible cell sequences.

    Each inner problem is a second-order cone program over the joint points,
    solved with Clarabel. Independent of the support machinery above.
    """
    seqs = carrier_sequences(space, x1, x2, max_carrier_len)
    if not seqs:
        raise NoSupportFound("no admissible cell sequence")
    best = math.inf
    for seq in seqs:
        if len(seq) == 1:
            best = min(best, float(np.linalg.norm(x1.values - x2.values)))
            continue
        problem, start, end = _path_problem(x1.ambient_dim, seq)
        start.value = x1.values
        end.value = x2.values
        with warnings.catch_warnings():
            # Clarabel flags near-degenerate cones as inaccurate; the value is still usable
            warnings.simplefilter("ignore", UserWarning)
            problem.solve(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
        if problem.value is not None:
            best = min(best, float(problem.value))
    return best
