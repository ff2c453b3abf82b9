import math

import numpy as np
import pytest
from hypothesis import assume, event, given
from hypothesis import strategies as st

from conftest import Q5, RANDOM3, SPACES, points, space_names
from orthant_stats.catalog import random_point
from orthant_stats.geodesic import distance, find_support
from orthant_stats.logmap import (
    InvalidTangent,
    TangentVector,
    ZeroVector,
    derivative_matrix,
    directional_derivative_matrix,
    directional_limit,
    embed,
    in_D,
    is_singular,
    log_map,
    m_dagger,
    phi_sigma,
    project,
    project_sigma,
    project_tau_minus_sigma,
    psi_tau,
    translated_log,
)
from orthant_stats.orthant_complex import cobounding_strata

XSTAR = Q5.point({0: 1.0, 1: 1.0})


def test_embed_interleaves_axes():
    out = embed([0, 3, 1, 5], [1.5, 2.5, 7.0, 9.0], 7)
    np.testing.assert_array_equal(out, [1.5, 7.0, 0, 2.5, 0, 9.0, 0])
    np.testing.assert_array_equal(embed(range(3), [1, 2, 3], 3), [1, 2, 3])
    v = embed([4, 2], [3.0, -1.0], 6)
    np.testing.assert_array_equal(v[[4, 2]], [3.0, -1.0])


@pytest.mark.parametrize(
    "coords, expected",
    [
        ({1: 2.0, 2: 1.0}, [-1.0, 2.0, 0, 0, 0]),
        ({2: 1.0, 3: 0.5}, [-1.0, -0.5, 0, 0, 0]),
        ({2: 1.0, 3: 2.0}, [-math.sqrt(5 / 2), -math.sqrt(5 / 2), 0, 0, 0]),
    ],
)
def test_pentagon_translated_log(coords, expected):
    x = Q5.point(coords)
    phi = translated_log(Q5, XSTAR, x)
    np.testing.assert_allclose(phi, expected, atol=1e-12, rtol=0)
    np.testing.assert_allclose(log_map(Q5, XSTAR, x), np.array(expected) - XSTAR.values, atol=1e-12)
    # sigma is top-dimensional here, so its projection is the identity
    np.testing.assert_array_equal(phi_sigma(Q5, XSTAR, x), phi)


def test_log_at_base_is_zero():
    assert np.all(log_map(Q5, XSTAR, XSTAR) == 0)


def test_projections():
    v = np.array([1.0, -2.0, 3.0, 4.0, 5.0])
    assert np.all(project_sigma(v, []) == 0)
    x = Q5.point({1: 2.0, 2: 3.0})
    np.testing.assert_array_equal(project_sigma(x.values, x.support), x.values)
    both = project_sigma(v, {0}) + project_tau_minus_sigma(v, {0}, {0, 1})
    np.testing.assert_array_equal(both, project(v, {0, 1}))


def test_tangent_vector_validation():
    with pytest.raises(InvalidTangent):
        TangentVector(frozenset({0}), frozenset({1}), [1.0, 0.0, 0, 0, 0])
    with pytest.raises(InvalidTangent):
        TangentVector(frozenset(), frozenset({1}), [1.0, 1.0, 0, 0, 0])
    w = TangentVector(frozenset({0}), frozenset({1}), [-1.0, 2.0, 0, 0, 0])
    np.testing.assert_array_equal(w.perp().coords, [0, 2.0, 0, 0, 0])


def test_psi_at_origin_matches_translated_log():
    origin = Q5.origin()
    w = TangentVector(frozenset(), frozenset({0, 1}), [1.0, 1.0, 0, 0, 0])
    for coords in [{1: 2.0, 2: 1.0}, {2: 1.0, 3: 0.5}, {2: 1.0, 3: 2.0}, {3: 1.0, 4: 1.0}, {4: 2.0}]:
        x = Q5.point(coords)
        np.testing.assert_allclose(
            directional_limit(Q5, origin, w, x), translated_log(Q5, XSTAR, x), atol=1e-12
        )


def test_psi_along_base_stratum_is_translated_log():
    xs = Q5.point({0: 2.0})
    w = TangentVector(frozenset({0}), frozenset(), [1.0, 0, 0, 0, 0])
    x = Q5.point({2: 1.0, 3: 1.0})
    np.testing.assert_array_equal(directional_limit(Q5, xs, w, x), translated_log(Q5, xs, x))


def test_m_dagger():
    np.testing.assert_allclose(m_dagger([1.0, 0.0]), [[0, 0], [0, 1]])
    np.testing.assert_array_equal(m_dagger([3.0]), [[0.0]])
    with pytest.raises(ZeroVector):
        m_dagger([0.0, 0.0])
    y = np.array([1.0, -2.0, 0.5])
    p = np.linalg.norm(y) * m_dagger(y)
    np.testing.assert_allclose(p @ p, p, atol=1e-14)
    np.testing.assert_allclose(p @ y, 0, atol=1e-14)


def test_derivative_zero_for_singleton_legs():
    x = Q5.point({2: 1.0, 3: 0.5})
    assert np.all(derivative_matrix(Q5, XSTAR, x) == 0)
    assert np.all(derivative_matrix(Q5, XSTAR, Q5.point({0: 3.0})) == 0)


def test_in_d_examples():
    x = Q5.point({2: 1.0, 3: 1.0})
    assert in_D(Q5, XSTAR, x)
    assert in_D(Q5, x, XSTAR)
    assert not in_D(Q5, XSTAR, Q5.point({2: 1.0, 3: 1.3}))
    assert not in_D(Q5, XSTAR, Q5.point({2: 1.0, 3: 0.7}))


def test_is_singular_examples():
    origin = Q5.origin()
    w = TangentVector(frozenset(), frozenset({0, 1}), np.array([1.0, 1.0, 0, 0, 0]) / math.sqrt(2))
    assert is_singular(Q5, origin, w, Q5.point({2: 1.0, 3: 2.0}))
    assert is_singular(Q5, origin, w, Q5.point({2: 1.0, 3: 1.0}))
    assert not is_singular(Q5, origin, w, Q5.point({2: 1.0, 3: 0.5}))
    # a single extra axis never gives a singular leg
    xs = Q5.point({0: 1.0})
    w1 = TangentVector(frozenset({0}), frozenset({1}), [0, 1.0, 0, 0, 0])
    for coords in [{2: 1.0, 3: 2.0}, {3: 1.0}, {2: 1.0}]:
        assert not is_singular(Q5, xs, w1, Q5.point(coords))


@st.composite
def tangent_triples(draw, space, unit=False, base_coords=True, min_extra=1):
    """(x*, w, x) with w pointing from the stratum of x* into a co-bounding stratum."""

    def targets(s):
        return [t for t in cobounding_strata(space, s) if len(t - s) >= min_extra]

    candidates = [s for s in space.strata if targets(s)]
    base = draw(st.sampled_from(sorted(candidates, key=lambda s: (len(s), sorted(s)))))
    v = np.zeros(space.ambient_dim)
    for a in sorted(base):
        v[a] = draw(st.floats(0.1, 3.0))
    xs = space.point(v)
    tau = draw(st.sampled_from(targets(base)))
    w = np.zeros(space.ambient_dim)
    for a in sorted(tau - base):
        w[a] = draw(st.floats(0.05, 2.0))
    if base_coords:
        for a in sorted(base):
            w[a] = draw(st.floats(-2.0, 2.0))
    if unit:
        w /= np.linalg.norm(w)
    x = draw(points(space))
    return xs, TangentVector(base, tau - base, w), x


@given(space_names, st.data())
def test_log_norm_is_distance(name, data):
    space = SPACES[name]
    xs = data.draw(points(space))
    x = data.draw(points(space))
    assert abs(np.linalg.norm(log_map(space, xs, x)) - distance(space, xs, x)) <= 1e-9


@given(space_names, st.data(), st.floats(0.05, 20.0))
def test_translated_log_invariant_under_base_scaling(name, data, lam):
    space = SPACES[name]
    xs = data.draw(points(space))
    x = data.draw(points(space))
    a = translated_log(space, xs, x)
    b = translated_log(space, xs.scaled(lam), x)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


@given(space_names, st.data(), st.sampled_from([0.5, 2.0]))
def test_psi_scale_and_perp_invariance(name, data, lam):
    space = SPACES[name]
    xs, w, x = data.draw(tangent_triples(space))
    base = directional_limit(space, xs, w, x)
    assert np.max(np.abs(directional_limit(space, xs, w.scaled(lam), x) - base)) <= 1e-9
    perp_tau = psi_tau(space, xs, w.perp(), x)
    assert np.max(np.abs(psi_tau(space, xs, w, x) - perp_tau)) <= 1e-9


@given(space_names, st.data())
def test_psi_projects_to_phi_sigma(name, data):
    space = SPACES[name]
    xs, w, x = data.draw(tangent_triples(space))
    lhs = project_sigma(psi_tau(space, xs, w, x), xs.support)
    assert np.max(np.abs(lhs - phi_sigma(space, xs, x))) <= 1e-9


@given(st.data())
def test_psi_continuous_in_direction(data):
    xs, w, x = data.draw(tangent_triples(RANDOM3, unit=True, base_coords=False))
    assume(not is_singular(RANDOM3, xs, w, x))
    base = psi_tau(RANDOM3, xs, w, x)
    rng = np.random.default_rng(0)
    extra = sorted(w.extra)
    for _ in range(3):
        v = w.coords.copy()
        v[extra] += 1e-4 * rng.standard_normal(len(extra))
        v[extra] = np.abs(v[extra])
        v /= np.linalg.norm(v)
        moved = psi_tau(RANDOM3, xs, TangentVector(w.base, w.extra, v), x)
        # the form of psi only changes across cell walls, where it stays continuous
        assert np.linalg.norm(moved - base) <= 1e3 * (1 + np.linalg.norm(x.values)) * np.linalg.norm(v - w.coords)


@given(space_names, st.data())
def test_derivative_negative_semidefinite(name, data):
    space = SPACES[name]
    xs = data.draw(points(space, strata=[s for s in space.strata if s]))
    x = data.draw(points(space))
    assume(not in_D(space, xs, x))
    m = derivative_matrix(space, xs, x)
    np.testing.assert_allclose(m, m.T, atol=1e-14)
    assert np.max(np.linalg.eigvalsh(m)) <= 1e-12
    outside = sorted(set(range(space.ambient_dim)) - xs.support)
    assert np.all(m[outside] == 0) and np.all(m[:, outside] == 0)


def sphere_fd(space, xs, w, x, v, h=1e-5):
    def at(s):
        d = w.coords * math.cos(s) + v * math.sin(s)
        return psi_tau(space, xs, TangentVector(w.base, w.extra, d), x)

    return (at(h) - at(-h)) / (2 * h)


@given(st.data())
def test_directional_derivative_orthogonal_and_matches_fd(data):
    xs, w, x = data.draw(tangent_triples(RANDOM3, unit=True, base_coords=False, min_extra=2))
    extra = sorted(w.extra)
    rng = np.random.default_rng(len(extra))
    v = np.zeros(RANDOM3.ambient_dim)
    v[extra] = rng.standard_normal(len(extra))
    v -= (v @ w.coords) * w.coords
    assume(np.linalg.norm(v) > 1e-3)
    v /= np.linalg.norm(v)
    m = directional_derivative_matrix(RANDOM3, xs, x, w)
    assert abs(w.coords @ (v @ m)) <= 1e-9
    if is_singular(RANDOM3, xs, w, x):
        event("singular")
    else:
        assert np.all(m == 0)
    h = 1e-5
    same = all(
        find_support(RANDOM3, xs, x) is not None
        and _stable(RANDOM3, xs, w, x, v, s)
        for s in (-h, h)
    )
    assume(same)
    fd = sphere_fd(RANDOM3, xs, w, x, v, h)
    assert np.linalg.norm(fd - v @ m) <= 1e-5 * max(1.0, np.linalg.norm(v @ m))


def _stable(space, xs, w, x, v, s):
    from orthant_stats.logmap import stabilized_support

    d = w.coords * math.cos(s) + v * math.sin(s)
    moved = stabilized_support(space, xs, TangentVector(w.base, w.extra, d), x)
    return moved == stabilized_support(space, xs, w, x)


def test_directional_derivative_fd_on_singular_legs():
    rng = np.random.default_rng(5)
    origin = RANDOM3.origin()
    checked = 0
    for _ in range(300):
        tau = RANDOM3.maximal[rng.integers(len(RANDOM3.maximal))]
        axes = sorted(tau)
        w = np.zeros(RANDOM3.ambient_dim)
        w[axes] = 0.2 + rng.random(len(axes))
        w /= np.linalg.norm(w)
        w = TangentVector(frozenset(), tau, w)
        x = random_point(RANDOM3, rng)
        if not is_singular(RANDOM3, origin, w, x):
            continue
        v = np.zeros(RANDOM3.ambient_dim)
        v[axes] = rng.standard_normal(len(axes))
        v -= (v @ w.coords) * w.coords
        v /= np.linalg.norm(v)
        if not (_stable(RANDOM3, origin, w, x, v, 1e-5) and _stable(RANDOM3, origin, w, x, v, -1e-5)):
            continue
        m = directional_derivative_matrix(RANDOM3, origin, x, w)
        assert np.any(m != 0)
        assert abs(w.coords @ (v @ m)) <= 1e-9
        fd = sphere_fd(RANDOM3, origin, w, x, v)
        assert np.linalg.norm(fd - v @ m) <= 1e-5 * max(1.0, np.linalg.norm(v @ m))
        checked += 1
    assert checked >= 20
