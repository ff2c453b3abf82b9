"""Translated log map, directional limits and their derivatives.

Vectors in the tangent cone are returned as dense ambient arrays of length M.
For a base point x* in the stratum O(E), the translated log ``phi`` equals
log_{x*}(x) + x* and lives in a cone shared by every base point of O(E), so
values at different base points of one stratum can be averaged directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geodesic import GeodesicSupport, _norm, _proper_splits, find_support
from .orthant_complex import OrthantError, OrthantSpace, Point

LAMBDA_LADDER = (1e-3, 1e-4, 1e-5, 1e-6)
D_RTOL = 1e-8


class StabilizationFailure(OrthantError):
    pass


class ZeroVector(OrthantError):
    pass


class OnSingularSet(OrthantError):
    pass


class InvalidTangent(OrthantError):
    pass


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Direction at a base point of O(E) pointing into the stratum O(E u F).

    ``coords`` is an ambient vector: signed on E, strictly positive on F and
    zero elsewhere.
    """

    base: frozenset
    extra: frozenset
    coords: np.ndarray

    def __post_init__(self):
        base, extra = frozenset(self.base), frozenset(self.extra)
        v = np.array(self.coords, dtype=float).ravel()
        if base & extra:
            raise InvalidTangent("base and extra axes must be disjoint")
        outside = np.ones(v.shape[0], dtype=bool)
        outside[list(base | extra)] = False
        if np.any(v[outside] != 0):
            raise InvalidTangent("coordinates outside E u F must vanish")
        if extra and np.any(v[sorted(extra)] <= 0):
            raise InvalidTangent("coordinates on F must be strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "extra", extra)
        object.__setattr__(self, "coords", v)

    @classmethod
    def into(cls, base, extra, coords) -> "TangentVector":
        return cls(frozenset(base), frozenset(extra), coords)

    @property
    def stratum(self) -> frozenset:
        return self.base | self.extra

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def scaled(self, factor: float) -> "TangentVector":
        return TangentVector(self.base, self.extra, self.coords * factor)

    def perp(self) -> "TangentVector":
        """Component orthogonal to the base stratum."""
        return TangentVector(self.base, self.extra, project(self.coords, self.extra))


def project(v: np.ndarray, axes) -> np.ndarray:
    out = np.zeros_like(v, dtype=float)
    idx = sorted(axes)
    out[idx] = v[idx]
    return out


def project_sigma(v: np.ndarray, base) -> np.ndarray:
    return project(v, base)


def project_tau_minus_sigma(v: np.ndarray, base, extra) -> np.ndarray:
    return project(v, frozenset(extra) - frozenset(base))


def embed(axes, values, ambient_dim: int) -> np.ndarray:
    """Scatter values given over an ordered axis list into ambient coordinates."""
    out = np.zeros(ambient_dim)
    out[list(axes)] = values
    return out


def _from_support(x: Point, support: GeodesicSupport, directions) -> np.ndarray:
    out = project(x.values, support.A[0])
    for (a, b), (idx, w) in zip(support.legs(), directions):
        out[idx] = -(_norm(x, b) / np.linalg.norm(w)) * w
    return out


def translated_log(space: OrthantSpace, x_star: Point, x: Point) -> np.ndarray:
    support = find_support(space, x_star, x)
    directions = []
    for a, _ in support.legs():
        idx = sorted(a)
        directions.append((idx, x_star.values[idx]))
    return _from_support(x, support, directions)


phi = translated_log


def log_map(space: OrthantSpace, x_star: Point, x: Point) -> np.ndarray:
    return translated_log(space, x_star, x) - x_star.values


def phi_sigma(space: OrthantSpace, x_star: Point, x: Point) -> np.ndarray:
    return project(translated_log(space, x_star, x), x_star.support)


def _ladder_scale(x_star: Point, w: TangentVector) -> float:
    if x_star.is_origin:
        return 1.0
    smallest = min(x_star.values[sorted(x_star.support)])
    return smallest / max(w.norm(), 1e-300)


def stabilized_support(
    space: OrthantSpace, x_star: Point, w: TangentVector, x: Point
) -> GeodesicSupport:
    """Support of the geodesic from x* + lambda*w to x for small lambda."""
    if w.base != x_star.support:
        raise InvalidTangent("tangent vector is not based at the stratum of x*")
    if x_star.is_origin:
        # supports are invariant under scaling of the start point
        return find_support(space, Point(w.coords), x)
    scale = _ladder_scale(x_star, w)
    previous = None
    for lam in LAMBDA_LADDER:
        start = Point(x_star.values + lam * scale * w.coords)
        support = find_support(space, start, x)
        if support == previous:
            return support
        previous = support
    raise StabilizationFailure(
        f"support from {x_star} along {w.coords} towards {x} did not stabilize"
    )


def _limit_directions(support, x_star: Point, w: TangentVector):
    base = x_star.support
    out = []
    for a, _ in support.legs():
        in_base = sorted(a & base)
        if in_base:
            out.append((sorted(a), project(x_star.values, in_base)[sorted(a)]))
        else:
            out.append((sorted(a), project(w.coords, a & w.extra)[sorted(a)]))
    return out


def directional_limit(
    space: OrthantSpace, x_star: Point, w: TangentVector, x: Point
) -> np.ndarray:
    """Limit of phi(x; x* + lambda*w) as lambda -> 0+."""
    if not w.extra:
        return translated_log(space, x_star, x)
    support = stabilized_support(space, x_star, w, x)
    return _from_support(x, support, _limit_directions(support, x_star, w))


psi = directional_limit


def psi_tau(space: OrthantSpace, x_star: Point, w: TangentVector, x: Point) -> np.ndarray:
    return project(directional_limit(space, x_star, w, x), w.stratum)


def m_dagger(y) -> np.ndarray:
    """Derivative of y -> y/|y|."""
    y = np.asarray(y, dtype=float).ravel()
    n = np.linalg.norm(y)
    if n == 0:
        raise ZeroVector("m_dagger needs a nonzero vector")
    if y.shape[0] == 1:
        return np.zeros((1, 1))
    return np.eye(y.shape[0]) / n - np.outer(y, y) / n**3


def _leg_blocks(x: Point, legs, directions, ambient_dim: int) -> np.ndarray:
    out = np.zeros((ambient_dim, ambient_dim))
    for (a, b), (idx, w) in zip(legs, directions):
        if len(idx) > 1:
            out[np.ix_(idx, idx)] = -_norm(x, b) * m_dagger(w)
    return out


def derivative_matrix_unchecked(space: OrthantSpace, x_star: Point, x: Point) -> np.ndarray:
    support = find_support(space, x_star, x)
    legs = support.legs()
    directions = [(sorted(a), x_star.values[sorted(a)]) for a, _ in legs]
    return _leg_blocks(x, legs, directions, x_star.ambient_dim)


def derivative_matrix(space: OrthantSpace, x_star: Point, x: Point) -> np.ndarray:
    """Jacobian of phi_sigma(x; .) at x* for perturbations within O(E(x*)).

    Returned as an M x M matrix supported on the E(x*) block. Raises
    OnSingularSet where phi changes form.
    """
    if in_D(space, x_star, x):
        raise OnSingularSet(f"{x} lies where phi(.; x*) is not differentiable")
    return derivative_matrix_unchecked(space, x_star, x)


def directional_derivative_matrix(
    space: OrthantSpace, x_star: Point, x: Point, w: TangentVector
) -> np.ndarray:
    """Derivative of psi_tau(x, .; x*) on the unit sphere of directions into O(F).

    M x M matrix supported on the F block; nonzero only on legs that avoid E
    and carry more than one axis of F.
    """
    support = stabilized_support(space, x_star, w, x)
    base = x_star.support
    legs, directions = [], []
    for a, b in support.legs():
        if a & base:
            continue
        idx = sorted(a & w.extra)
        legs.append((a, b))
        directions.append((idx, w.coords[idx]))
    return _leg_blocks(x, legs, directions, x_star.ambient_dim)


def in_D(space: OrthantSpace, x_star: Point, x: Point, rtol: float = D_RTOL) -> bool:
    """Whether x lies on a boundary where the form of phi(.; x*) changes."""
    support = find_support(space, x_star, x)
    A, B = support.A, support.B
    for i in range(1, support.k + 1):
        before = set(A[0])
        for j in range(1, i):
            before |= B[j]
        after = set()
        for j in range(i + 1, support.k + 1):
            after |= A[j]
        for c1, c2 in _proper_splits(A[i]):
            for d1, d2 in _proper_splits(B[i]):
                if not space.is_stratum(frozenset(before | d1 | c2 | after)):
                    continue
                lhs = _norm(x_star, c1) / _norm(x, d1)
                rhs = _norm(x_star, c2) / _norm(x, d2)
                if abs(lhs - rhs) > rtol * max(lhs, rhs):
                    continue
                if not space.is_stratum(frozenset(before | d2 | c1 | after)):
                    return True
    return False


def is_singular(space: OrthantSpace, x_star: Point, w: TangentVector, x: Point) -> bool:
    support = stabilized_support(space, x_star, w, x)
    base = x_star.support
    return any(
        not (a & base) and len(a & w.extra) > 1 for a, _ in support.legs()
    )
