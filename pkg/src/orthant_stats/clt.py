"""Sampling, sample Fréchet means and their limiting distributions.

For a mean x* in O(E), the scaled error sqrt(n)(mean_n - x*) is predicted to
be Gaussian on each piece R(E) x cone(Theta_tau) of the tangent cone, with
covariance A^T V A where A^{-1} = I - E[derivative of phi_sigma] and V is the
covariance of the relevant log-map variable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import multivariate_normal, norm, qmc

from .frechet import (
    DiscreteMeasure,
    MeanCertificate,
    NonConvergence,
    ThetaEstimate,
    directional_value,
    frechet_mean,
    sphere_grid,
    theta_set,
    verify_mean,
)
from .logmap import (
    TangentVector,
    derivative_matrix_unchecked,
    in_D,
    is_singular,
    phi_sigma,
    psi_tau,
)
from .orthant_complex import (
    OrthantError,
    OrthantSpace,
    Point,
    cobounding_strata,
    local_codimension,
)


class PreconditionFailed(OrthantError):
    def __init__(self, failures: list[str]):
        self.failures = failures
        super().__init__("; ".join(failures))


class SingularMatrix(OrthantError):
    pass


class HypothesisNotMet(OrthantError):
    pass


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(key=int(seed)))


def sample_counts(mu: DiscreteMeasure, n: int, seed) -> np.ndarray:
    """Number of draws landing on each atom."""
    if n == 0:
        return np.zeros(len(mu), dtype=int)
    idx = _generator(seed).choice(len(mu), size=n, p=mu.weights)
    return np.bincount(idx, minlength=len(mu))


def sample_measure(mu: DiscreteMeasure, n: int, seed) -> list[Point]:
    """n independent draws from mu."""
    if n == 0:
        return []
    idx = _generator(seed).choice(len(mu), size=n, p=mu.weights)
    return [mu.points[i] for i in idx]


def _weighted_cov(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    mean = weights @ values
    centred = values - mean
    return (centred * weights[:, None]).T @ centred


def _expected_derivative(space, mu, x_star) -> np.ndarray:
    total = np.zeros((x_star.ambient_dim, x_star.ambient_dim))
    for p, w in mu.atoms():
        total += w * derivative_matrix_unchecked(space, x_star, p)
    return total


def a_matrix(space: OrthantSpace, mu: DiscreteMeasure, x_star: Point, tau) -> np.ndarray:
    """Inverse of I - E[derivative] restricted to the axes of tau (sorted)."""
    axes = sorted(frozenset(tau) | x_star.support)
    restricted = np.eye(len(axes)) - _expected_derivative(space, mu, x_star)[np.ix_(axes, axes)]
    if len(axes) and np.linalg.cond(restricted) > 1e12:
        raise SingularMatrix("I - E[derivative] is numerically singular")
    return np.linalg.inv(restricted) if axes else np.zeros((0, 0))


@dataclass
class GaussianPiece:
    stratum: frozenset
    axes: tuple
    codimension: int
    a_matrix: np.ndarray
    v_matrix: np.ndarray
    direction: np.ndarray | None
    singular_atoms: list

    @property
    def covariance(self) -> np.ndarray:
        return self.a_matrix.T @ self.v_matrix @ self.a_matrix

    def as_dict(self):
        return {
            "stratum": sorted(self.stratum),
            "axes": list(self.axes),
            "codimension": self.codimension,
            "A": self.a_matrix.tolist(),
            "V": self.v_matrix.tolist(),
            "covariance": self.covariance.tolist(),
            "direction": None if self.direction is None else self.direction.tolist(),
            "singular_atoms": self.singular_atoms,
        }


@dataclass
class CltPrediction:
    space: OrthantSpace
    measure: DiscreteMeasure
    x_star: Point
    base: frozenset
    codimension: int
    pieces: list
    thetas: dict
    certificate: MeanCertificate
    checks: dict = field(default_factory=dict)

    @property
    def min_codimension(self) -> int:
        return min(p.codimension for p in self.pieces)

    def piece(self, tau) -> GaussianPiece | None:
        tau = frozenset(tau)
        for p in self.pieces:
            if p.stratum == tau:
                return p
        return None

    def fold_stratum(self) -> frozenset | None:
        """The unique lowest-codimension stratum with a full equality set, if the
        single-stratum fold applies."""
        low = self.min_codimension
        if low >= self.codimension:
            return None
        lowest = [p for p in self.pieces if p.codimension == low]
        if len(lowest) != 1:
            return None
        tau = lowest[0].stratum
        theta = self.thetas.get(tau)
        if theta is None or not theta.is_full:
            return None
        return tau

    def cone(self) -> list[dict]:
        out = []
        for p in self.pieces:
            theta = self.thetas.get(p.stratum)
            out.append(
                {
                    "linear_axes": sorted(self.base),
                    "stratum": sorted(p.stratum),
                    "directions": None if theta is None else theta.as_dict(),
                }
            )
        return out

    def as_dict(self):
        return {
            "x_star": {str(a): v for a, v in self.x_star.coords.items()},
            "stratum": sorted(self.base),
            "codimension": self.codimension,
            "min_codimension": self.min_codimension,
            "pieces": [p.as_dict() for p in self.pieces],
            "cone": self.cone(),
            "fold_stratum": None if self.fold_stratum() is None else sorted(self.fold_stratum()),
            "checks": self.checks,
        }


def _stratum_codim(space, base, tau) -> int:
    return local_codimension(space, base) + len(base) - len(tau)


def predict(
    space: OrthantSpace,
    mu: DiscreteMeasure,
    x_star: Point,
    grid_resolution: int = 64,
    certificate: MeanCertificate | None = None,
) -> CltPrediction:
    """Gaussian pieces of the limiting law of sqrt(n)(mean_n - x*).

    Preconditions are checked and reported: x* must pass the mean
    certificate and no atom may sit where phi(.; x*) is not differentiable.
    """
    cert = certificate or verify_mean(space, mu, x_star, sphere_samples=grid_resolution)
    on_d = [i for i, p in enumerate(mu.points) if in_D(space, x_star, p)]
    checks = {
        "mean_certified": bool(cert.passed),
        "atoms_on_nondifferentiable_set": on_d,
        "expected_derivative_finite": True,
    }
    failures = []
    if not cert.passed:
        failures.append("x* does not satisfy the first-order mean conditions")
    if on_d:
        failures.append(f"atoms {on_d} lie where phi(.; x*) is not differentiable")
    if failures:
        raise PreconditionFailed(failures)

    base = x_star.support
    codim = local_codimension(space, base)
    expected = _expected_derivative(space, mu, x_star)

    def a_for(axes):
        restricted = np.eye(len(axes)) - expected[np.ix_(axes, axes)]
        if len(axes) and np.linalg.cond(restricted) > 1e12:
            raise SingularMatrix("I - E[derivative] is numerically singular")
        return np.linalg.inv(restricted) if axes else np.zeros((0, 0))

    pieces = []
    thetas = {}
    axes = sorted(base)
    phis = np.array([phi_sigma(space, x_star, p)[axes] for p in mu.points]).reshape(len(mu), len(axes))
    pieces.append(
        GaussianPiece(base, tuple(axes), codim, a_for(axes), _weighted_cov(phis, mu.weights), None, [])
    )
    for tau in cobounding_strata(space, base):
        extra = tau - base
        if len(extra) == 1:
            grid = sphere_grid(extra, x_star.ambient_dim, 1)
            value = directional_value(space, mu, x_star, TangentVector(base, extra, grid[0]))
            theta = ThetaEstimate(
                tau, tuple(sorted(extra)), grid, np.array([value]),
                np.array([abs(value) <= cert.tolerance]), cert.tolerance, 1,
            )
        else:
            theta = theta_set(space, mu, x_star, tau, grid_resolution)
        thetas[tau] = theta
        if theta.is_empty:
            continue
        w = _interior_direction(theta)
        tangent = TangentVector(base, extra, w)
        tau_axes = sorted(tau)
        values = np.array([psi_tau(space, x_star, tangent, p)[tau_axes] for p in mu.points])
        singular = [i for i, p in enumerate(mu.points) if is_singular(space, x_star, tangent, p)]
        pieces.append(
            GaussianPiece(
                tau, tuple(tau_axes), _stratum_codim(space, base, tau), a_for(tau_axes),
                _weighted_cov(values, mu.weights), w, singular,
            )
        )
    return CltPrediction(space, mu, x_star, base, codim, pieces, thetas, cert, checks)


def _interior_direction(theta: ThetaEstimate) -> np.ndarray:
    """Angular centroid of the flagged grid, snapped to the nearest flagged
    point when the centroid itself is not flagged."""
    c = theta.centroid()
    flagged = theta.directions[theta.flags]
    nearest = flagged[np.argmax(flagged @ c)]
    return c if np.allclose(nearest, c, atol=(math.pi / 2) / max(theta.resolution, 1)) else nearest


def folded_density(
    prediction: CltPrediction, tau, z, return_error: bool = False
):
    """Density of the limit law on R(E) x O(F) for F inside the fold stratum.

    The Gaussian of the fold stratum is integrated over the negative orthant
    of the axes it has beyond ``tau``. When tau carries no free coordinates
    the value is a probability mass.
    """
    top = prediction.fold_stratum()
    if top is None:
        raise HypothesisNotMet("no single lowest-codimension stratum with full equality set")
    tau = frozenset(tau)
    base = prediction.base
    if not base <= tau <= top:
        raise HypothesisNotMet(f"{sorted(tau)} is not between the mean's stratum and the fold stratum")
    piece = prediction.piece(top)
    cov = piece.covariance
    order = list(piece.axes)
    keep = [order.index(a) for a in sorted(tau)]
    fold = [order.index(a) for a in sorted(top - tau)]
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if len(z) != len(keep):
        raise ValueError(f"z must have {len(keep)} coordinates")
    ckk = cov[np.ix_(keep, keep)]
    cff = cov[np.ix_(fold, fold)]
    cfk = cov[np.ix_(fold, keep)]
    if keep:
        density = multivariate_normal(np.zeros(len(keep)), ckk, allow_singular=True).pdf(z)
        gain = cfk @ np.linalg.pinv(ckk)
        cond_mean = gain @ z
        cond_cov = cff - gain @ cfk.T
    else:
        density = 1.0
        cond_mean = np.zeros(len(fold))
        cond_cov = cff
    error = 0.0
    if not fold:
        mass = 1.0
    elif len(fold) == 1:
        sd = math.sqrt(max(cond_cov[0, 0], 0.0))
        mass = float(norm.cdf(-cond_mean[0] / sd)) if sd > 0 else float(cond_mean[0] <= 0)
    else:
        mass, error = orthant_probability(cond_mean, cond_cov)
    value = float(density) * mass
    return (value, error) if return_error else value


def orthant_probability(
    mean: np.ndarray, cov: np.ndarray, log2_points: int = 14, scrambles: int = 8
) -> tuple[float, float]:
    """P(Z <= 0 coordinatewise) for Z ~ N(mean, cov), with a standard error.

    Uses the separation-of-variables transform, which makes the integrand
    smooth, over scrambled Sobol points with fixed seeds so results are
    reproducible.
    """
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[0]
    upper = -mean
    jitter = 1e-14 * max(1.0, float(np.max(np.diag(cov))))
    chol = np.linalg.cholesky(cov + jitter * np.eye(d))
    first = norm.cdf(upper[0] / chol[0, 0])
    if d == 1:
        return float(first), 0.0
    estimates = []
    for seed in range(scrambles):
        w = qmc.Sobol(d - 1, scramble=True, seed=seed).random_base2(log2_points)
        y = np.zeros((w.shape[0], d))
        e = np.full(w.shape[0], first)
        f = e.copy()
        for i in range(1, d):
            y[:, i - 1] = norm.ppf(np.clip(w[:, i - 1] * e, 1e-300, 1 - 1e-16))
            shift = y[:, :i] @ chol[i, :i]
            e = norm.cdf((upper[i] - shift) / chol[i, i])
            f *= e
        estimates.append(f.mean())
    estimates = np.array(estimates)
    return float(estimates.mean()), float(estimates.std(ddof=1) / math.sqrt(scrambles))


@dataclass
class EmpiricalCLT:
    n: int
    reps: int
    seed: int
    x_star: Point
    strata: list
    scaled: np.ndarray
    means: list

    def as_rows(self):
        for i, (s, v) in enumerate(zip(self.strata, self.scaled)):
            yield i, s, v


def _one_rep(space, mu, x_star, n, child, rep):
    counts = sample_counts(mu, n, child)
    keep = counts > 0
    points = [p for p, k in zip(mu.points, keep) if k]
    empirical = DiscreteMeasure.from_points(points, counts[keep])
    try:
        mean = frechet_mean(space, empirical)
    except NonConvergence as exc:
        raise NonConvergence(f"rep {rep}: {exc}", best=exc.best, certificate=exc.certificate) from exc
    return mean


def monte_carlo(
    space: OrthantSpace,
    mu: DiscreteMeasure,
    n: int,
    reps: int,
    seed: int,
    x_star: Point | None = None,
    threads: int = 1,
) -> EmpiricalCLT:
    """Sample means of ``reps`` independent samples of size n.

    Each rep draws from its own Philox stream spawned from ``seed``, so the
    result does not depend on ``threads``.
    """
    if x_star is None:
        x_star = frechet_mean(space, mu)
    children = np.random.SeedSequence(seed).spawn(reps)
    jobs = [(space, mu, x_star, n, children[r], r) for r in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            means = list(pool.map(lambda job: _one_rep(*job), jobs))
    else:
        means = [_one_rep(*job) for job in jobs]
    scale = math.sqrt(n)
    scaled = np.array([scale * (m.values - x_star.values) for m in means]).reshape(reps, x_star.ambient_dim)
    strata = [tuple(sorted(m.support)) for m in means]
    return EmpiricalCLT(n, reps, seed, x_star, strata, scaled, means)


def support_frequencies(
    empirical: EmpiricalCLT, prediction: CltPrediction, tol: float = 1e-6
) -> dict:
    """Hit counts per stratum and draws that fall outside the predicted cone.

    A draw in O(E u F) is inside the cone when its direction into O(F)
    satisfies the equality condition; draws whose direction is within one
    grid step of a flagged direction are binned as boundary cases.
    """
    space, mu, x_star = prediction.space, prediction.measure, prediction.x_star
    base = prediction.base
    counts: dict[str, int] = {}
    violations, boundary, outside = [], [], []
    for rep, stratum, z in empirical.as_rows():
        key = ",".join(str(a) for a in stratum) or "origin"
        counts[key] = counts.get(key, 0) + 1
        s = frozenset(stratum)
        if not base <= s:
            outside.append(rep)
            continue
        extra = s - base
        if not extra:
            continue
        theta = prediction.thetas.get(s)
        u = np.zeros_like(z)
        idx = sorted(extra)
        u[idx] = z[idx]
        u /= np.linalg.norm(u)
        value = directional_value(space, mu, x_star, TangentVector(base, extra, u))
        if abs(value) <= max(tol, prediction.certificate.tolerance):
            continue
        if theta is not None and not theta.is_empty and theta.resolution > 1:
            flagged = theta.directions[theta.flags]
            gap = float(np.arccos(np.clip(np.max(flagged @ u), -1, 1)))
            if gap <= (math.pi / 2) / theta.resolution:
                boundary.append(rep)
                continue
        violations.append({"rep": rep, "stratum": list(stratum), "value": value})
    return {
        "counts": counts,
        "violations": violations,
        "boundary": boundary,
        "outside_tangent_cone": outside,
    }
