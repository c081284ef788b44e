import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipstab.model import ParamBox, SafePolytope, affine_plant, linearize
from lipstab.sector import (
    ControlBox,
    SectorBound,
    VertexExplosionError,
    compute_sector,
    npv,
    npv_jacobian,
    npv_jacobian_entry,
    uncertainty_vertices,
)

K_TEST = np.array([[-2.0, 0.3], [0.5, -1.5]])


def _states_in(polytope, rng, count):
    lo, hi = polytope.bounding_box()
    out = []
    while len(out) < count:
        x = rng.uniform(lo, hi, size=(4 * count, lo.size))
        out.extend(p for p in x if polytope.contains(p))
    return np.array(out[:count])


@pytest.fixture(scope="module")
def example_sector(plant, params, polytope):
    return compute_sector(plant, K_TEST, 1.1, polytope, params, 1e-3)


def test_entry_examples(plant, rng):
    for _ in range(50):
        x, u, theta = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), rng.uniform(-0.1, 0.1, 2)
        K = rng.normal(size=(2, 2))
        assert npv_jacobian_entry(plant, K, "x", 0, 0, x, u, theta) == 0.0
        assert npv_jacobian_entry(plant, K, "x", 0, 1, x, u, theta) == pytest.approx(-theta[0], abs=1e-15)
        for i in range(2):
            for j in range(2):
                assert npv_jacobian_entry(plant, K, "u", i, j, x, u, theta) == 0.0


def test_entry_index_errors(plant):
    z = np.zeros(2)
    with pytest.raises(IndexError):
        npv_jacobian_entry(plant, K_TEST, "x", 2, 0, z, z, z)
    with pytest.raises(ValueError):
        npv_jacobian_entry(plant, K_TEST, "w", 0, 0, z, z, z)


def test_example_sector_entries(example_sector):
    s = example_sector
    assert s.lower[0, 0] == 0.0 and s.upper[0, 0] == 0.0
    assert -0.051 <= s.lower[0, 1] <= -0.05 and 0.05 <= s.upper[0, 1] <= 0.051
    assert np.all(s.lower[:, 2:] == 0.0) and np.all(s.upper[:, 2:] == 0.0)
    assert np.all(s.tight)


def test_example_sector_second_row_matches_closed_form(example_sector):
    # J21 = 2(1+w2) x1 x2 and J22 = (1+w2)(x1^2-1)+1 - (-1) adjusted: both depend only on (x, w2)
    s = example_sector
    assert s.lower[1, 0] == pytest.approx(-0.18087, abs=2e-3)
    assert s.upper[1, 0] == pytest.approx(0.63283, abs=2e-3)
    assert s.lower[1, 1] == pytest.approx(-0.1, abs=2e-3)
    assert s.upper[1, 1] == pytest.approx(0.2025, abs=2e-3)


def test_sector_soundness(plant, params, polytope, example_sector, rng):
    s = example_sector
    xs = _states_in(polytope, rng, 10_000)
    us = rng.uniform(-s.control_box.u_max, s.control_box.u_max, size=(10_000, 2))
    thetas = params.sample(rng, 10_000)
    nom = linearize(plant)
    worst = 0.0
    for x, u, th in zip(xs, us, thetas):
        jac = npv_jacobian(plant, K_TEST, x, u, th, nom)
        worst = max(worst, float(np.max(s.lower - jac)), float(np.max(jac - s.upper)))
    assert worst <= 1e-3


def test_npv_identity(plant, params, rng):
    for _ in range(200):
        x, u_rho, (w1, w2) = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), params.sample(rng)
        x1, x2 = x
        expected = np.array([-w1 * x2, -w2 * x2 + (1 + w2) * x1 ** 2 * x2])
        np.testing.assert_allclose(npv(plant, K_TEST, x, u_rho, [w1, w2]), expected, atol=1e-12)


def test_linear_plant_without_uncertainty_has_zero_sector():
    model = affine_plant([[0.0, 1.0], [-1.0, 0.5]], [[0.0], [1.0]])
    poly = SafePolytope.from_box([-1.0, -1.0], [1.0, 1.0])
    s = compute_sector(model, [[-1.0, -2.0]], 0.7, poly, ParamBox([0.0], [0.0]))
    assert np.all(s.lower == 0.0) and np.all(s.upper == 0.0)


def test_larger_budget_and_domain_never_shrink_sector(plant, params, polytope):
    small = compute_sector(plant, K_TEST, 0.2, polytope.scaled(0.5), params)
    bigger_L = compute_sector(plant, K_TEST, 1.0, polytope.scaled(0.5), params)
    bigger_X = compute_sector(plant, K_TEST, 0.2, polytope, params)
    for big in (bigger_L, bigger_X):
        assert np.all(big.lower <= small.lower + 1e-3)
        assert np.all(big.upper >= small.upper - 1e-3)


def test_control_box():
    poly = SafePolytope.from_box([-1.0, -2.0], [0.5, 1.0])
    box = ControlBox.for_budget(1.5, poly, 3)
    np.testing.assert_allclose(box.u_max, [3.0, 3.0, 3.0])
    with pytest.raises(ValueError):
        ControlBox.for_budget(-1.0, poly, 1)


def test_sector_csv_round_trip(example_sector):
    text = example_sector.to_csv()
    assert text.splitlines()[0] == "row,col,lo,hi"
    back = SectorBound.from_csv(text)
    np.testing.assert_array_equal(back.lower, example_sector.lower)
    np.testing.assert_array_equal(back.upper, example_sector.upper)


def test_widened_keeps_center():
    s = SectorBound([[0.0, -1.0]], [[2.0, 1.0]])
    w = s.widened(3.0)
    np.testing.assert_allclose(w.center, s.center)
    np.testing.assert_allclose(w.upper - w.lower, 3.0 * (s.upper - s.lower))


def test_example_uncertainty_vertices(plant, params):
    verts = uncertainty_vertices(plant, params)
    assert len(verts) == 4
    a12 = sorted({round(A[0, 1], 3) for A in verts.A})
    a22 = sorted({round(A[1, 1], 3) for A in verts.A})
    assert np.allclose(a12, [-1.05, -0.95], atol=2e-3)
    assert np.allclose(a22, [-1.1, -0.9], atol=2e-3)
    for A, B in zip(verts.A, verts.B):
        assert A[0, 0] == 0.0 and A[1, 0] == 1.0
        np.testing.assert_array_equal(B, np.eye(2))


def test_vertex_hull_contains_sampled_linearizations(plant, params, rng):
    verts = uncertainty_vertices(plant, params)
    for theta in params.sample(rng, 100):
        lin = linearize(plant, theta)
        assert verts.contains(lin.A, lin.B)
    assert not verts.contains(linearize(plant).A + 0.5, np.eye(2))


def test_degenerate_parameter_box_gives_single_vertex(plant):
    verts = uncertainty_vertices(plant, ParamBox([0.0, 0.0], [0.0, 0.0]))
    assert len(verts) == 1
    np.testing.assert_array_equal(verts.A[0], linearize(plant).A)


def test_three_dependent_entries_give_eight_vertices():
    E = lambda i, j: np.eye(2)[[i]].T @ np.eye(2)[[j]]
    model = affine_plant(np.zeros((2, 2)), np.eye(2), A_terms=[E(0, 0), E(0, 1), E(1, 1)])
    verts = uncertainty_vertices(model, ParamBox([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]))
    assert len(verts) == 8


def test_vertex_explosion_is_refused():
    n = 5
    terms = []
    for k in range(21):
        t = np.zeros((n, n))
        t.flat[k] = 1.0
        terms.append(t)
    model = affine_plant(np.zeros((n, n)), np.eye(n), A_terms=terms)
    with pytest.raises(VertexExplosionError):
        uncertainty_vertices(model, ParamBox(-np.ones(21), np.ones(21)))


@settings(max_examples=8, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_u_block_is_gain_independent_for_example(plant, params, polytope, k11, k12, k21, k22):
    # the example's input matrix is constant, so only the x-block sees the gain
    K = np.array([[k11, k12], [k21, k22]])
    s = compute_sector(plant, K, 0.3, polytope.scaled(0.3), params)
    assert np.all(s.lower[:, 2:] == 0.0) and np.all(s.upper[:, 2:] == 0.0)
    assert s.lower[0, 0] == 0.0 and s.upper[0, 0] == 0.0
