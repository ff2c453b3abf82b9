"""Ready-made spaces, measures and random generators."""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .frechet import DiscreteMeasure
from .orthant_complex import OrthantSpace, Point, build_space

PENTAGON = [[0, 1], [1, 2], [2, 3], [3, 4], [4, 0]]


def pentagon_space() -> OrthantSpace:
    """Five quadrants glued in a cycle: a 2-dimensional space whose link is a pentagon."""
    return build_space(5, PENTAGON)


def spider_space(legs: int = 3) -> OrthantSpace:
    """Half-lines glued at the origin."""
    return build_space(legs, [[i] for i in range(legs)])


def antipodal_pair(radius: float = 1.0, alpha: float = math.pi / 6) -> tuple[Point, Point]:
    """Two points of the pentagon space on a geodesic through the cone point.

    The first lies in O(u1,u5) at angle alpha from u1, the second in O(u2,u3)
    at angle alpha from u3; the angle between them through the cone point
    is exactly pi.
    """
    space = pentagon_space()
    p1 = space.point({0: radius * math.cos(alpha), 4: radius * math.sin(alpha)})
    p2 = space.point({1: radius * math.sin(alpha), 2: radius * math.cos(alpha)})
    return p1, p2


def antipodal_measure(radius: float = 1.0, alpha: float = math.pi / 6) -> DiscreteMeasure:
    return DiscreteMeasure.from_points(antipodal_pair(radius, alpha))


def random_flag_space(
    ambient_dim: int, max_dim: int, rng: np.random.Generator, edge_prob: float = 0.5
) -> OrthantSpace:
    """Clique complex of a random graph, with cliques capped at ``max_dim``.

    Edges that would create a clique larger than ``max_dim`` are rejected,
    so the result satisfies the flag condition by construction.
    """
    while True:
        adjacency = {v: set() for v in range(ambient_dim)}
        pairs = [(a, b) for a in range(ambient_dim) for b in range(a + 1, ambient_dim)]
        for idx in rng.permutation(len(pairs)):
            a, b = pairs[idx]
            if rng.random() >= edge_prob:
                continue
            common = adjacency[a] & adjacency[b]
            if any(
                all(v in adjacency[u] for u, v in combinations(sub, 2))
                for sub in combinations(sorted(common), max_dim - 1)
            ):
                continue
            adjacency[a].add(b)
            adjacency[b].add(a)
        cliques = _cliques(adjacency)
        if max(len(c) for c in cliques) == max_dim:
            return build_space(ambient_dim, cliques)


def _cliques(adjacency) -> list[list[int]]:
    out = []

    def grow(clique, candidates):
        extended = False
        for v in sorted(candidates):
            if v > clique[-1]:
                extended = True
                grow(clique + [v], candidates & adjacency[v])
        if not extended:
            out.append(clique)

    for v in adjacency:
        grow([v], set(adjacency[v]))
    # keep only maximal ones
    sets = [frozenset(c) for c in out]
    return [sorted(c) for c in set(sets) if not any(c < d for d in sets)]


def random_point(
    space: OrthantSpace,
    rng: np.random.Generator,
    stratum=None,
    scale: float = 1.0,
) -> Point:
    """Point with exponential-ish coordinates in a random (or given) maximal orthant."""
    if stratum is None:
        stratum = space.maximal[rng.integers(len(space.maximal))]
    axes = sorted(stratum)
    v = np.zeros(space.ambient_dim)
    v[axes] = scale * (0.05 + rng.random(len(axes)))
    return space.point(v)


def random_measure(
    space: OrthantSpace, rng: np.random.Generator, atoms: int = 5
) -> DiscreteMeasure:
    points = [random_point(space, rng) for _ in range(atoms)]
    return DiscreteMeasure.from_points(points, 0.2 + rng.random(atoms))
