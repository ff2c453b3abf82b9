"""Fréchet function, Fréchet means and their first-order certificates.

A candidate x* in the stratum O(E) is the mean of mu exactly when
  * x* equals the average of phi_sigma(.; x*) over mu, and
  * for every stratum O(E u F) above O(E) and every unit direction w into
    O(F), the average of <w, psi_tau(., w; x*)> is nonpositive.
The second condition is checked on a dense grid of directions refined by
projected ascent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import qmc

from .geodesic import eval_geodesic
from .logmap import (
    TangentVector,
    derivative_matrix_unchecked,
    in_D,
    is_singular,
    project,
    psi_tau,
    translated_log,
)
from .orthant_complex import OrthantError, OrthantSpace, Point, cobounding_strata

EQUALITY_TOL = 1e-7
MAX_GRID = 20_000


class InvalidMeasure(OrthantError):
    pass


class NonConvergence(OrthantError):
    def __init__(self, message, best=None, certificate=None):
        super().__init__(message)
        self.best = best
        self.certificate = certificate


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        pts = tuple(self.points)
        if not pts:
            raise InvalidMeasure("measure needs at least one atom")
        if len(pts) != w.shape[0]:
            raise InvalidMeasure("one weight per atom is required")
        if np.any(w <= 0):
            raise InvalidMeasure("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidMeasure(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points, weights=None) -> "DiscreteMeasure":
        points = list(points)
        w = np.ones(len(points)) if weights is None else np.asarray(weights, float)
        return cls(tuple(points), w / w.sum())

    @classmethod
    def empirical(cls, sample) -> "DiscreteMeasure":
        """Empirical measure with repeated points merged into one atom."""
        counts: dict[Point, int] = {}
        for p in sample:
            counts[p] = counts.get(p, 0) + 1
        pts = list(counts)
        return cls.from_points(pts, [counts[p] for p in pts])

    def __len__(self):
        return len(self.points)

    def atoms(self):
        return zip(self.points, self.weights)


def _weighted_sum(vectors, weights) -> np.ndarray:
    # fixed summation order keeps results reproducible
    return np.einsum("i,ij->j", np.asarray(weights), np.asarray(vectors))


def _phis(space, mu, x_star):
    return [translated_log(space, x_star, p) for p in mu.points]


def frechet_value(space: OrthantSpace, mu: DiscreteMeasure, x: Point) -> float:
    phis = _phis(space, mu, x)
    sq = [float(np.dot(v - x.values, v - x.values)) for v in phis]
    return 0.5 * float(np.dot(mu.weights, sq))


def mean_phi_sigma(space, mu, x_star) -> np.ndarray:
    return project(_weighted_sum(_phis(space, mu, x_star), mu.weights), x_star.support)


def mean_psi_tau(space, mu, x_star, w: TangentVector) -> np.ndarray:
    return _weighted_sum([psi_tau(space, x_star, w, p) for p in mu.points], mu.weights)


def directional_value(space, mu, x_star, w: TangentVector) -> float:
    return float(np.dot(w.coords, mean_psi_tau(space, mu, x_star, w)))


# ---------------------------------------------------------------------------
# direction grids


def sphere_grid(extra, ambient_dim: int, resolution: int) -> np.ndarray:
    """Unit vectors with strictly positive coordinates on ``extra``.

    Hyperspherical angles on a midpoint grid with ``resolution`` points per
    angle; scrambled Sobol angles once the full grid exceeds MAX_GRID.
    """
    axes = sorted(extra)
    d = len(axes)
    out_dim = max(d - 1, 0)
    if d == 0:
        return np.zeros((0, ambient_dim))
    if d == 1:
        out = np.zeros((1, ambient_dim))
        out[0, axes[0]] = 1.0
        return out
    if resolution ** out_dim <= MAX_GRID:
        ticks = (np.arange(resolution) + 0.5) * (math.pi / 2) / resolution
        angles = np.array(np.meshgrid(*([ticks] * out_dim), indexing="ij")).reshape(out_dim, -1).T
    else:
        sampler = qmc.Sobol(out_dim, scramble=True, seed=0)
        angles = sampler.random(MAX_GRID) * (math.pi / 2)
    local = np.ones((angles.shape[0], d))
    for j in range(out_dim):
        local[:, j] *= np.cos(angles[:, j])
        local[:, j + 1 :] *= np.sin(angles[:, j])[:, None]
    out = np.zeros((angles.shape[0], ambient_dim))
    out[:, axes] = local
    return out


def _tangent(base, extra, vec) -> TangentVector:
    v = np.array(vec, dtype=float)
    idx = sorted(extra)
    v[idx] = np.maximum(v[idx], 1e-15)
    v /= np.linalg.norm(v)
    return TangentVector(frozenset(base), frozenset(extra), v)


def _ascend(space, mu, x_star, base, extra, start: np.ndarray, value: float, step: float, iters=20):
    w = _tangent(base, extra, start)
    best_w, best_v = w, value
    for _ in range(iters):
        total = mean_psi_tau(space, mu, x_star, best_w)
        grad = project(total, extra)
        grad -= np.dot(grad, best_w.coords) * best_w.coords
        gnorm = np.linalg.norm(grad)
        if gnorm < 1e-14:
            break
        moved = False
        while step > 1e-10:
            cand = _tangent(base, extra, best_w.coords + step * grad / gnorm)
            val = directional_value(space, mu, x_star, cand)
            if val > best_v:
                best_w, best_v, moved = cand, val, True
                step *= 1.5
                break
            step *= 0.5
        if not moved:
            break
    return best_w, best_v


@dataclass
class DirectionalCheck:
    stratum: frozenset
    value: float
    direction: np.ndarray

    def as_dict(self):
        return {
            "stratum": sorted(self.stratum),
            "max_value": self.value,
            "direction": self.direction.tolist(),
        }


@dataclass
class MeanCertificate:
    candidate: Point
    fixed_point_residual: float
    directional: list
    tolerance: float
    passed: bool
    sphere_samples: int = 64

    def worst(self) -> DirectionalCheck | None:
        if not self.directional:
            return None
        return max(self.directional, key=lambda c: c.value)

    def as_dict(self):
        return {
            "candidate": {str(a): v for a, v in self.candidate.coords.items()},
            "stratum": sorted(self.candidate.support),
            "fixed_point_residual": self.fixed_point_residual,
            "directional": [c.as_dict() for c in self.directional],
            "tolerance": self.tolerance,
            "sphere_samples": self.sphere_samples,
            "passed": self.passed,
        }


def verify_mean(
    space: OrthantSpace,
    mu: DiscreteMeasure,
    x_star: Point,
    sphere_samples: int = 64,
    tol: float = EQUALITY_TOL,
) -> MeanCertificate:
    """Check both first-order conditions for x* being the mean of mu."""
    base = x_star.support
    mean_phi = mean_phi_sigma(space, mu, x_star)
    residual = float(np.linalg.norm(x_star.values - mean_phi))
    threshold = tol * (1.0 + float(np.linalg.norm(mean_phi)))
    checks = []
    for tau in cobounding_strata(space, base):
        extra = tau - base
        grid = sphere_grid(extra, x_star.ambient_dim, sphere_samples)
        values = np.array(
            [directional_value(space, mu, x_star, TangentVector(base, extra, g)) for g in grid]
        )
        order = np.argsort(-values, kind="stable")
        best_w = TangentVector(base, extra, grid[order[0]])
        best_v = float(values[order[0]])
        if len(extra) > 1:
            step = (math.pi / 2) / sphere_samples
            for j in order[:3]:
                w, v = _ascend(space, mu, x_star, base, extra, grid[j], float(values[j]), step)
                if v > best_v:
                    best_w, best_v = w, v
        checks.append(DirectionalCheck(tau, best_v, best_w.coords.copy()))
    passed = residual <= threshold and all(c.value <= threshold for c in checks)
    return MeanCertificate(x_star, residual, checks, threshold, passed, sphere_samples)


@dataclass
class ThetaEstimate:
    stratum: frozenset
    extra: tuple
    directions: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    tolerance: float
    resolution: int

    @property
    def is_empty(self) -> bool:
        return not bool(self.flags.any())

    @property
    def is_full(self) -> bool:
        return bool(self.flags.all())

    def centroid(self) -> np.ndarray | None:
        """Normalized mean of the flagged directions."""
        if self.is_empty:
            return None
        c = self.directions[self.flags].mean(axis=0)
        return c / np.linalg.norm(c)

    def angles(self) -> np.ndarray | None:
        """Angle from the first extra axis, for two extra axes."""
        if len(self.extra) != 2:
            return None
        a, b = self.extra
        return np.arctan2(self.directions[:, b], self.directions[:, a])

    def angular_range(self) -> tuple[float, float] | None:
        ang = self.angles()
        if ang is None or self.is_empty:
            return None
        flagged = ang[self.flags]
        return float(flagged.min()), float(flagged.max())

    def interior(self, margin: int = 2) -> np.ndarray:
        """Flagged directions at least ``margin`` grid steps from unflagged ones."""
        if self.is_empty:
            return self.directions[:0]
        if self.is_full:
            return self.directions
        step = (math.pi / 2) / self.resolution
        inside = self.directions[self.flags]
        outside = self.directions[~self.flags]
        cosines = np.clip(inside @ outside.T, -1.0, 1.0)
        gaps = np.arccos(cosines).min(axis=1)
        return inside[gaps > margin * step]

    def as_dict(self):
        out = {
            "stratum": sorted(self.stratum),
            "extra_axes": list(self.extra),
            "resolution": self.resolution,
            "tolerance": self.tolerance,
            "flagged": int(self.flags.sum()),
            "total": int(self.flags.shape[0]),
            "empty": self.is_empty,
            "full": self.is_full,
        }
        c = self.centroid()
        out["centroid"] = None if c is None else c.tolist()
        rng = self.angular_range()
        if rng is not None:
            out["angle_range"] = list(rng)
        return out


def theta_set(
    space: OrthantSpace,
    mu: DiscreteMeasure,
    x_star: Point,
    tau,
    grid_resolution: int = 256,
    tol: float = EQUALITY_TOL,
) -> ThetaEstimate:
    """Grid estimate of the directions into ``tau`` where the first-order
    condition holds with equality."""
    base = x_star.support
    tau = frozenset(tau)
    if not base < tau or not space.is_stratum(tau):
        raise OrthantError(f"{sorted(tau)} is not a stratum above {sorted(base)}")
    extra = tau - base
    threshold = tol * (1.0 + float(np.linalg.norm(mean_phi_sigma(space, mu, x_star))))
    grid = sphere_grid(extra, x_star.ambient_dim, grid_resolution)
    values = np.array(
        [directional_value(space, mu, x_star, TangentVector(base, extra, g)) for g in grid]
    )
    flags = np.abs(values) <= threshold
    return ThetaEstimate(tau, tuple(sorted(extra)), grid, values, flags, threshold, grid_resolution)


def check_consistency_identities(
    space: OrthantSpace,
    mu: DiscreteMeasure,
    x_star: Point,
    tau,
    directions,
) -> dict:
    """Residuals of the identities that hold for w inside the equality set.

    ``directions`` are unit vectors into O(tau minus E(x*)), all assumed
    interior to the equality set.
    """
    base = x_star.support
    extra = frozenset(tau) - base
    ws = [TangentVector(base, extra, d) for d in np.atleast_2d(directions)]
    phi_mean = mean_phi_sigma(space, mu, x_star)
    normal_residual = 0.0
    mean_residual = 0.0
    per_atom = []
    for w in ws:
        psis = [psi_tau(space, x_star, w, p) for p in mu.points]
        total = _weighted_sum(psis, mu.weights)
        normal_residual = max(
            normal_residual, float(np.linalg.norm(total - phi_mean))
        )
        mean_residual = max(mean_residual, float(np.linalg.norm(total - x_star.values)))
        per_atom.append(psis)
    excluded = [
        i
        for i, p in enumerate(mu.points)
        if in_D(space, x_star, p) or any(is_singular(space, x_star, w, p) for w in ws)
    ]
    spread = 0.0
    for i in range(len(mu.points)):
        if i in excluded:
            continue
        vals = np.array([psis[i] for psis in per_atom])
        spread = max(spread, float(np.max(np.ptp(vals, axis=0))) if len(vals) else 0.0)
    return {
        "normal_residual": normal_residual,
        "mean_residual": mean_residual,
        "direction_spread": spread,
        "excluded_atoms": excluded,
        "directions": len(ws),
    }


# ---------------------------------------------------------------------------
# mean search


def _shares_orthant(space, mu) -> bool:
    union = frozenset().union(*(p.support for p in mu.points))
    return space.is_stratum(union)


def inductive_mean(space: OrthantSpace, mu: DiscreteMeasure, passes: int = 3) -> Point:
    """Weighted inductive mean, cycling through atoms by decreasing weight."""
    order = np.argsort(-mu.weights, kind="stable")
    x = mu.points[order[0]]
    cumulative = float(mu.weights[order[0]])
    for p in range(passes):
        for j in order[1:] if p == 0 else order:
            w = float(mu.weights[j])
            cumulative += w
            x = eval_geodesic(space, x, mu.points[j], w / cumulative)
    return x


def _value_and_gradient(space, mu, y: np.ndarray, axes: list[int]):
    x = Point(y)
    phis = _phis(space, mu, x)
    sq = [float(np.dot(v - x.values, v - x.values)) for v in phis]
    mean_phi = _weighted_sum(phis, mu.weights)
    grad = y[axes] - mean_phi[axes]
    return 0.5 * float(np.dot(mu.weights, sq)), grad, mean_phi, x


def _newton_in_stratum(space, mu, x: Point, tol: float, max_steps: int = 100) -> Point:
    """Minimize the Fréchet function over the closure of the stratum of x,
    dropping axes whose coordinate reaches zero."""
    y = x.values.copy()
    for _ in range(max_steps):
        axes = sorted(np.flatnonzero(y).tolist())
        if not axes:
            return Point(y)
        value, grad, mean_phi, xp = _value_and_gradient(space, mu, y, axes)
        if np.linalg.norm(grad) <= tol * (1.0 + np.linalg.norm(mean_phi[axes])):
            return xp
        jac = np.zeros((len(axes), len(axes)))
        for p, wt in zip(mu.points, mu.weights):
            jac += wt * derivative_matrix_unchecked(space, xp, p)[np.ix_(axes, axes)]
        step = -np.linalg.solve(np.eye(len(axes)) - jac, grad)
        current = y[axes]
        shrinking = step < 0
        t_wall = np.min(-current[shrinking] / step[shrinking]) if shrinking.any() else np.inf
        t = min(1.0, t_wall)
        slope = float(np.dot(grad, step))
        accepted = None
        while t > 1e-14:
            cand = y.copy()
            cand[axes] = current + t * step
            if t == t_wall:
                hit = np.flatnonzero(cand[axes] <= 1e-12 * max(1.0, np.max(current)))
                cand[[axes[i] for i in hit]] = 0.0
            cand = np.maximum(cand, 0.0)
            cand_value = frechet_value(space, mu, Point(cand))
            if cand_value <= value + 1e-4 * t * slope:
                accepted = cand
                break
            t *= 0.5
        if accepted is None:
            return xp
        y = accepted
    return Point(y)


def _step_out(space, mu, x: Point, check: DirectionalCheck) -> Point:
    """Line search along the ray from x in a violating direction."""
    direction = check.direction
    reach = max(np.linalg.norm(p.values - x.values) for p in mu.points) + x.norm() + 1.0
    result = minimize_scalar(
        lambda s: frechet_value(space, mu, Point(x.values + s * direction)),
        bounds=(0.0, reach),
        method="bounded",
        options={"xatol": 1e-12 * reach},
    )
    s = float(result.x)
    base_value = frechet_value(space, mu, x)
    if result.fun >= base_value:
        # fall back to a short probe so that progress is always made
        s = min(s, 1e-6 * reach) or 1e-6 * reach
    return Point(x.values + s * direction)


def frechet_mean(
    space: OrthantSpace,
    mu: DiscreteMeasure,
    max_iter: int = 50,
    tol: float = 1e-10,
    seed: int = 0,
    sphere_samples: int = 64,
    certificate_tol: float = EQUALITY_TOL,
) -> Point:
    """Unique minimizer of the Fréchet function of mu.

    An inductive start is refined by Newton steps inside the current stratum;
    whenever the certificate finds a descent direction into a higher stratum
    the search moves there along a ray. Raises NonConvergence with the best
    iterate if no certified point is found within ``max_iter`` rounds.
    ``seed`` is accepted for interface stability; the search is deterministic.
    """
    if len(mu) == 1:
        return mu.points[0]
    if _shares_orthant(space, mu):
        # the closed orthant is convex, so the Euclidean mean is the mean
        return Point(_weighted_sum([p.values for p in mu.points], mu.weights))
    passes = max(1, min(5, 400 // len(mu)))
    x = inductive_mean(space, mu, passes)
    best, best_value, cert = x, math.inf, None
    for _ in range(max_iter):
        x = _newton_in_stratum(space, mu, x, tol)
        value = frechet_value(space, mu, x)
        if value < best_value:
            best, best_value = x, value
        cert = verify_mean(space, mu, x, sphere_samples, certificate_tol)
        if cert.passed:
            return x
        worst = cert.worst()
        if worst is None or worst.value <= cert.tolerance:
            break
        x = _step_out(space, mu, x, worst)
    raise NonConvergence("no certified mean found", best=best, certificate=cert)
