import numpy as np
import pytest

from cachefield.field import (
    barycentric_grid,
    content_stf,
    convergence_projection_metric,
    field_snapshot,
    lru_content_stf,
    replacement_activity_metric,
    rr_content_stf,
    sample_domain,
    stf,
)
from cachefield.schemes import LP, LRU, RR, TLP, conditional_matrix, lru_recency_profile, overall_matrix
from cachefield.sim import CacheInstance, step
from cachefield.states import enumerate_states, sorted_space
from cachefield.steady import steady_state_rr_closed_form


def test_rr_field_at_vertex(v3, space3):
    u = stf(overall_matrix(RR(0.45), space3, v3), [1, 0, 0])
    np.testing.assert_allclose(u, [-0.189, 0.0945, 0.0945], atol=1e-15)


def test_rr_field_at_vertex_by_one_step_simulation(v3, space3):
    rng = np.random.default_rng(11)
    n = 200_000
    counts = np.zeros(3)
    reqs = rng.choice(3, size=n, p=v3) + 1
    for l in reqs:
        _, c = step(RR(0.45), CacheInstance(frozenset({1, 2}), 2), int(l), rng)
        counts[space3.index(c.contents)] += 1
    u_hat = counts / n - [1, 0, 0]
    assert np.all(np.abs(u_hat - [-0.189, 0.0945, 0.0945]) < 4 * np.sqrt(0.19 * 0.81 / n))


def test_field_vanishes_at_steady_state(v3, space3):
    eta = steady_state_rr_closed_form(space3, v3).eta_star
    np.testing.assert_allclose(stf(overall_matrix(RR(0.2), space3, v3), eta), 0, atol=1e-14)


def test_field_is_affine(v3, space3):
    th = overall_matrix(LRU(), space3, v3)
    a, b = np.array([0.2, 0.5, 0.3]), np.array([0.6, 0.1, 0.3])
    np.testing.assert_allclose(stf(th, 0.3 * a + 0.7 * b), 0.3 * stf(th, a) + 0.7 * stf(th, b), atol=1e-15)


def test_field_rejects_bad_input(v3, space3):
    th = overall_matrix(RR(0.2), space3, v3)
    with pytest.raises(ValueError):
        stf(th, [0.5, 0.5])
    with pytest.raises(ValueError):
        stf(th[:2], [0.5, 0.5])


def test_rr_closed_form_content_field():
    v = np.array([0.3, 0.25, 0.2, 0.15, 0.1])
    sp = enumerate_states(5, 2)
    pts = sample_domain(sp.n_states, 100, rng_seed=3)
    for l in range(1, 6):
        th = conditional_matrix(RR(0.3), sp, v, l)
        for x in pts:
            np.testing.assert_allclose(rr_content_stf(sp, 0.3, l, x), content_stf(th, x), atol=1e-12)


def test_lru_closed_form_content_field():
    v = np.array([0.3, 0.25, 0.2, 0.15, 0.1])
    sp = enumerate_states(5, 3)
    rho = lru_recency_profile(sp, v)
    for x in sample_domain(sp.n_states, 20, rng_seed=4):
        for l in range(1, 6):
            np.testing.assert_allclose(lru_content_stf(sp, rho, l, x), content_stf(conditional_matrix(LRU(), sp, v, l), x), atol=1e-12)


def test_content_field_zero_on_state_caching_l(v3, space3):
    assert np.all(content_stf(conditional_matrix(LP(0.9), space3, v3, 2), [1, 0, 0]) == 0)


def test_grid_and_sampling():
    g = barycentric_grid(0.1)
    assert g.shape == (66, 3)
    np.testing.assert_allclose(g.sum(axis=1), 1)
    assert np.array_equal(sample_domain(5, 1, rng_seed=9), sample_domain(5, 1, rng_seed=9))
    pts = sample_domain(10, 50, rng_seed=1)
    assert np.all(pts >= 0) and np.allclose(pts.sum(axis=1), 1)
    with pytest.raises(ValueError):
        sample_domain(4, 1, grid_step=0.1)
    with pytest.raises(ValueError):
        barycentric_grid(0.3)
    with pytest.raises(ValueError):
        sample_domain(3, 0)


def test_snapshot_rr_scaling(v3, space3):
    pts = barycentric_grid(0.1)
    a = field_snapshot(RR(0.45), space3, v3, pts)
    b = field_snapshot(RR(0.2), space3, v3, pts, decompose=True)
    for sa, sb in zip(a, b):
        np.testing.assert_allclose(sa.field, 2.25 * sb.field, atol=1e-15)
        assert abs(sa.field.sum()) < 1e-12
        np.testing.assert_allclose(v3 @ sb.decomposition, sb.field, atol=1e-12)


def test_activity_metric():
    sp = enumerate_states(4, 2)
    v = np.array([0.4, 0.3, 0.2, 0.1])
    top = np.zeros(sp.n_states)
    top[sp.index({1, 2})] = 1
    assert replacement_activity_metric(TLP("A"), sp, v, top) == 0
    u = np.full(4, 0.25)
    eta_u = np.full(sp.n_states, 1 / sp.n_states)
    assert replacement_activity_metric(RR(0.5), sp, u, eta_u) > 0
    eta = steady_state_rr_closed_form(sp, v).eta_star
    m45 = replacement_activity_metric(RR(0.45), sp, v, eta)
    m20 = replacement_activity_metric(RR(0.2), sp, v, eta)
    assert m45 == pytest.approx(2.25 * m20, rel=1e-12)


def test_projection_metric(v3):
    sp = sorted_space(enumerate_states(3, 2), v3)
    pts = sample_domain(3, 500, rng_seed=2)
    top = np.array([0.0, 0.0, 1.0])
    a = convergence_projection_metric(TLP("A"), sp, v3, top, pts)
    p = convergence_projection_metric(TLP("P"), sp, v3, top, pts)
    assert a.aggregate >= p.aggregate > 0
    assert a.minimum <= a.aggregate <= a.maximum and a.samples_used == 500
    assert a.second_eigenvalue_numeric == pytest.approx(0.71)
    with pytest.raises(ValueError, match="no sample points"):
        convergence_projection_metric(TLP("A"), sp, v3, top, [top, top])
