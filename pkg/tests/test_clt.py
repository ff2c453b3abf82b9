import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import multivariate_normal

from conftest import Q5, RANDOM3
from orthant_stats import clt
from orthant_stats.catalog import antipodal_measure, random_point, spider_space
from orthant_stats.clt import (
    HypothesisNotMet,
    PreconditionFailed,
    a_matrix,
    folded_density,
    monte_carlo,
    predict,
    sample_measure,
    support_frequencies,
)
from orthant_stats.frechet import DiscreteMeasure, NonConvergence, ThetaEstimate, frechet_mean
from orthant_stats.logmap import phi_sigma
from orthant_stats.orthant_complex import build_space

EX4 = antipodal_measure()

BOOK = build_space(4, [[0, 1], [0, 2], [0, 3]])
BOOK_MU = DiscreteMeasure.from_points(
    [
        BOOK.point({0: 1.0, 1: 1.0}),
        BOOK.point({0: 2.0, 1: 0.5}),
        BOOK.point({0: 0.5, 2: 0.8}),
        BOOK.point({0: 1.5, 3: 0.8}),
    ],
    [0.3, 0.2, 0.25, 0.25],
)


def spider_measure(weights=(0.5, 0.25, 0.25)):
    space = spider_space(3)
    pts = [space.point({i: 1.0}) for i in range(3)]
    return space, DiscreteMeasure.from_points(pts, list(weights))


def test_sample_measure_trivial_cases():
    assert sample_measure(EX4, 0, seed=1) == []
    y = Q5.point({0: 1.0})
    mu = DiscreteMeasure.from_points([y])
    assert sample_measure(mu, 5, seed=3) == [y] * 5


def test_sample_measure_frequencies_and_determinism():
    n = 10_000
    draws = sample_measure(EX4, n, seed=42)
    share = sum(p == EX4.points[0] for p in draws) / n
    assert abs(share - 0.5) <= 3 * math.sqrt(0.25 / n)
    assert draws == sample_measure(EX4, n, seed=42)
    assert draws != sample_measure(EX4, n, seed=43)


def test_a_matrix_identity_cases():
    x = Q5.point({0: 1.0, 1: 1.0})
    mu = DiscreteMeasure.from_points([Q5.point({2: 1.0, 3: 0.5}), Q5.point({0: 2.0, 1: 0.3})])
    np.testing.assert_array_equal(a_matrix(Q5, mu, x, x.support), np.eye(2))
    y = Q5.point({0: 1.5, 1: 0.5})
    np.testing.assert_array_equal(
        a_matrix(Q5, DiscreteMeasure.from_points([y]), y, y.support), np.eye(2)
    )


def _fd_derivative(space, xs, x, h=1e-5):
    axes = sorted(xs.support)
    out = np.zeros((len(axes), len(axes)))
    for j, a in enumerate(axes):
        step = np.zeros(space.ambient_dim)
        step[a] = h
        hi = phi_sigma(space, space.point(xs.values + step), x)
        lo = phi_sigma(space, space.point(xs.values - step), x)
        out[:, j] = ((hi - lo) / (2 * h))[axes]
    return out


def test_a_matrix_matches_finite_differences():
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(20):
        xs = random_point(RANDOM3, rng, scale=0.5)
        mu = DiscreteMeasure.from_points([random_point(RANDOM3, rng, scale=3.0) for _ in range(4)])
        expected = np.eye(len(xs.support)) - sum(
            w * _fd_derivative(RANDOM3, xs, p) for p, w in mu.atoms()
        )
        got = a_matrix(RANDOM3, mu, xs, xs.support)
        if np.allclose(got, np.eye(len(xs.support))):
            continue
        np.testing.assert_allclose(got, np.linalg.inv(expected), atol=1e-5)
        checked += 1
    assert checked >= 5


def test_top_stratum_prediction_is_single_gaussian():
    pts = [Q5.point({0: a, 1: b}) for a, b in [(1, 1), (2, 1), (1.5, 2.5), (2.5, 2), (3, 1.2)]]
    mu = DiscreteMeasure.from_points(pts, [1, 2, 1, 1, 1])
    mean = frechet_mean(Q5, mu)
    pred = predict(Q5, mu, mean)
    assert len(pred.pieces) == 1
    assert pred.min_codimension == pred.codimension == 0
    piece = pred.pieces[0]
    np.testing.assert_allclose(piece.a_matrix, np.eye(2), atol=1e-12)
    values = np.array([p.values[[0, 1]] for p in pts])
    mean_xy = mu.weights @ values
    cov = ((values - mean_xy) * mu.weights[:, None]).T @ (values - mean_xy)
    np.testing.assert_allclose(piece.covariance, cov, atol=1e-12)


def test_point_mass_prediction_is_degenerate():
    y = Q5.point({0: 1.0, 1: 2.0})
    pred = predict(Q5, DiscreteMeasure.from_points([y]), y)
    assert np.all(pred.pieces[0].covariance == 0)


def test_antipodal_prediction_pieces():
    pred = predict(Q5, EX4, Q5.origin())
    strata = {p.stratum for p in pred.pieces}
    # the spine directions lie in the equality sets of these two strata
    assert frozenset({0, 4}) in strata and frozenset({1, 2}) in strata
    assert frozenset({2, 3}) not in strata and frozenset({3, 4}) not in strata
    assert pred.min_codimension == 0
    assert pred.fold_stratum() is None
    for piece in pred.pieces:
        cov = piece.covariance
        np.testing.assert_allclose(cov, cov.T, atol=1e-14)
        if cov.size:
            assert np.min(np.linalg.eigvalsh(cov)) >= -1e-12
    with pytest.raises(HypothesisNotMet):
        folded_density(pred, [], [])


def test_predict_preconditions():
    with pytest.raises(PreconditionFailed) as err:
        predict(Q5, EX4, Q5.point({0: 0.1}))
    assert "first-order" in str(err.value)
    x = Q5.point({0: 1.0, 1: 1.0})
    # the second atom sits where phi(.; x) changes form, and x is their mean
    mu = DiscreteMeasure.from_points([Q5.point({0: 2.0, 1: 2.0}), Q5.point({2: 1.0, 3: 1.0})], [0.5, 0.5])
    with pytest.raises(PreconditionFailed):
        predict(Q5, mu, x)


def test_spider_fold_has_half_mass_at_origin():
    space, mu = spider_measure()
    pred = predict(space, mu, space.origin())
    assert pred.codimension == 1 and pred.min_codimension == 0
    assert pred.fold_stratum() == frozenset({0})
    assert folded_density(pred, [], []) == pytest.approx(0.5, abs=1e-15)
    assert folded_density(pred, [0], [0.7]) == pytest.approx(
        multivariate_normal(0, 1.0).pdf(0.7), abs=1e-15
    )
    with pytest.raises(HypothesisNotMet):
        folded_density(pred, [1], [0.7])


def test_book_fold_normalizes():
    mean = frechet_mean(BOOK, BOOK_MU)
    pred = predict(BOOK, BOOK_MU, mean)
    assert pred.fold_stratum() == frozenset({0, 1})
    cov = pred.piece([0, 1]).covariance
    assert abs(cov[0, 1]) > 0.05
    spine = integrate.quad(lambda z: folded_density(pred, [0], [z]), -np.inf, np.inf)[0]
    page = integrate.dblquad(
        lambda y, z: folded_density(pred, [0, 1], [z, y]), -np.inf, np.inf, 0, np.inf
    )[0]
    assert spine == pytest.approx(0.5, abs=1e-8)
    assert spine + page == pytest.approx(1.0, abs=1e-8)


def test_two_dimensional_fold_normalizes():
    base = predict(Q5, EX4, Q5.origin())
    tau = frozenset({0, 1})
    piece = dataclasses.replace(
        base.piece(tau), a_matrix=np.eye(2), v_matrix=np.array([[1.0, 0.6], [0.6, 2.0]])
    )
    pred = dataclasses.replace(base, pieces=[base.pieces[0], piece], thetas={tau: base.thetas[tau]})
    assert pred.fold_stratum() == tau
    corner, err = folded_density(pred, [], [], return_error=True)
    assert err > 0
    rays = [
        integrate.quad(lambda z, a=a: folded_density(pred, [a], [z]), 0, np.inf)[0] for a in (0, 1)
    ]
    quadrant = integrate.dblquad(lambda y, z: folded_density(pred, [0, 1], [z, y]), 0, np.inf, 0, np.inf)[0]
    assert corner + sum(rays) + quadrant == pytest.approx(1.0, abs=1e-5)
    # the plain Gaussian density on the fold stratum itself
    assert folded_density(pred, [0, 1], [0.3, -0.2]) == pytest.approx(
        multivariate_normal([0, 0], piece.covariance).pdf([0.3, -0.2]), rel=1e-12
    )


def test_spider_monte_carlo_mass_at_origin():
    space, mu = spider_measure()
    pred = predict(space, mu, space.origin())
    emp = monte_carlo(space, mu, n=201, reps=2000, seed=3)
    share = sum(s == () for s in emp.strata) / emp.reps
    assert abs(share - folded_density(pred, [], [])) <= 0.03
    report = support_frequencies(emp, pred)
    assert report["violations"] == [] and report["outside_tangent_cone"] == []
    assert set(report["counts"]) <= {"origin", "0"}


def test_book_monte_carlo_mass_on_spine():
    mean = frechet_mean(BOOK, BOOK_MU)
    pred = predict(BOOK, BOOK_MU, mean)
    emp = monte_carlo(BOOK, BOOK_MU, n=201, reps=1000, seed=9)
    share = sum(s == (0,) for s in emp.strata) / emp.reps
    assert abs(share - 0.5) <= 0.05
    assert support_frequencies(emp, pred)["violations"] == []


def test_strict_measure_stays_at_origin():
    space, mu = spider_measure((0.4, 0.3, 0.3))
    pred = predict(space, mu, space.origin())
    assert len(pred.pieces) == 1
    emp = monte_carlo(space, mu, n=400, reps=300, seed=1)
    report = support_frequencies(emp, pred)
    assert report["counts"] == {"origin": 300}
    assert report["violations"] == []


def test_point_mass_draws_at_atom():
    y = Q5.point({0: 1.0, 1: 2.0})
    emp = monte_carlo(Q5, DiscreteMeasure.from_points([y]), n=10, reps=5, seed=0)
    assert all(m == y for m in emp.means)
    assert np.all(emp.scaled == 0)


def test_monte_carlo_deterministic_and_thread_independent():
    a = monte_carlo(Q5, EX4, n=20, reps=30, seed=5)
    b = monte_carlo(Q5, EX4, n=20, reps=30, seed=5, threads=4)
    np.testing.assert_array_equal(a.scaled, b.scaled)
    assert a.strata == b.strata


def test_sample_size_one_returns_atoms():
    emp = monte_carlo(Q5, EX4, n=1, reps=20, seed=2, x_star=Q5.origin())
    assert all(m in EX4.points for m in emp.means)


def test_nonconvergence_reports_run_index(monkeypatch):
    def broken(space, mu, **kw):
        raise NonConvergence("stuck")

    monkeypatch.setattr(clt, "frechet_mean", broken)
    with pytest.raises(NonConvergence, match="rep 0"):
        monte_carlo(Q5, EX4, n=5, reps=3, seed=0, x_star=Q5.origin())


def test_support_report_flags_excluded_direction():
    pred = predict(Q5, EX4, Q5.origin())
    fake = clt.EmpiricalCLT(
        n=1, reps=2, seed=0, x_star=Q5.origin(),
        strata=[(3, 4), (0, 4)],
        scaled=np.array([[0, 0, 0, 1.0, 1.0], [math.cos(0.2), 0, 0, 0, math.sin(0.2)]]),
        means=[],
    )
    report = support_frequencies(fake, pred)
    assert [v["rep"] for v in report["violations"]] == [0]
    assert isinstance(pred.thetas[frozenset({0, 4})], ThetaEstimate)


def test_orthant_probability_closed_forms():
    rho = 0.6 / math.sqrt(2)
    p2, err2 = clt.orthant_probability(np.zeros(2), np.array([[1.0, 0.6], [0.6, 2.0]]))
    assert p2 == pytest.approx(0.25 + math.asin(rho) / (2 * math.pi), abs=1e-6)
    assert 0 < err2 < 1e-5
    corr = np.array([[1.0, 0.3, -0.2], [0.3, 1.0, 0.5], [-0.2, 0.5, 1.0]])
    p3, _ = clt.orthant_probability(np.zeros(3), corr)
    expected = 0.125 + (math.asin(0.3) + math.asin(-0.2) + math.asin(0.5)) / (4 * math.pi)
    assert p3 == pytest.approx(expected, abs=1e-6)
    assert p3 == clt.orthant_probability(np.zeros(3), corr)[0]
