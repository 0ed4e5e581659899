import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randtangency.geometry import (ConeParams, ReturnTimeNotConstant, ScreenFailed, covered_radius,
                                   inscribed_radius, perturbation_curve, propagate_tangent, return_disk,
                                   three_return_derivative, verify_ball, verify_return_cone)
from randtangency.model import classify, step
from randtangency.orbits import deterministic_orbit


# --- tangent propagation ----------------------------------------------------------

def test_linear_propagation(model):
    w = propagate_tangent(model, (0.01, 0.2, 0.3), [0.06] * 3, (1, 1, 1))
    assert np.allclose(w, [model.sigma ** 3, model.lambda1 ** 3, model.lambda2 ** 3])


def _hand_jacobian(p, x):
    # written out from the map's definition, independent of the package kernels
    if p.regions.R_box.contains(x):
        u = x[0] - 1.0
        return np.array([[2 * p.a * u, p.b[0], p.b[1]],
                         [p.B[0], p.C[0][0], p.C[0][1]],
                         [p.B[1], p.C[1][0], p.C[1][1]]])
    return np.diag([p.sigma, p.lambda1, p.lambda2])


def test_propagation_matches_hand_composition(model, shipped):
    rng = np.random.default_rng(0)
    x0 = shipped["recurrent"][0]
    ts = rng.uniform(0.05, 0.07, 12)
    pts = deterministic_orbit(model, x0, ts)
    M = np.eye(3)
    for x in pts[:-1]:
        M = _hand_jacobian(model, x) @ M
    v = np.array([0.3, -0.2, 1.0])
    assert np.allclose(propagate_tangent(model, x0, ts, v), M @ v, rtol=1e-13, atol=1e-15)


def _labels(p, x, ts):
    out = []
    for t in ts:
        x = step(p, x, t)
        if x is None:
            return None
        out.append(int(classify(p, x)))
    return out


def test_chain_rule_matches_finite_differences(model):
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 100:
        x = rng.uniform([-0.2, -0.35, -0.35], [1.4, 0.6, 0.4])
        ts = rng.uniform(0.05, 0.07, rng.integers(1, 8))
        v = rng.normal(size=3)
        h = 1e-7
        lab = _labels(model, x, ts)
        if lab is None or _labels(model, x + h * v, ts) != lab or _labels(model, x - h * v, ts) != lab:
            continue
        w = propagate_tangent(model, x, ts, v)
        fd = (deterministic_orbit(model, x + h * v, ts)[-1] - deterministic_orbit(model, x - h * v, ts)[-1]) / (2 * h)
        assert np.max(np.abs(w - fd)) <= 1e-5 * max(1.0, np.max(np.abs(w)))
        checked += 1


# --- cone check ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def cone_report(model, kernel):
    return verify_return_cone(model, kernel, n_samples=300, seed=3)


def test_cone_conclusions_hold(cone_report, model):
    r = cone_report
    assert r.n_samples == 300 and r.pass_fraction_all == 1.0
    assert r.max_return_slope <= 0.2 and r.min_norm_ratio >= model.B_norm / 10
    assert r.eta == pytest.approx(1 / (model.sigma * model.lambda1))
    assert r.min_linear_steps >= 1 and r.failures == ()


def test_vertical_sample_returns_along_B(cone_report):
    assert cone_report.vertical_return_slope <= 0.2


def test_cone_check_is_seed_deterministic(model, kernel, cone_report):
    again = verify_return_cone(model, kernel, n_samples=300, seed=3)
    assert again.to_dict() == cone_report.to_dict()


def test_cone_params_validated():
    with pytest.raises(ValueError):
        ConeParams(c0=0.5)
    with pytest.raises(ValueError):
        ConeParams(b0=1.5)


# --- perturbation curve ---------------------------------------------------------------

def test_perturbation_curve(model, kernel, shipped):
    rep = perturbation_curve(model, shipped["disk_base"], kernel, 1000)
    assert rep.max_error < 1e-8
    assert rep.passes() and rep.min_slope >= 10
    # for the flat fold the curve is a straight segment along (1, A)
    assert np.allclose(rep.derivative, [1.0, *model.A], atol=1e-8)


def test_curve_needs_base_in_R(model, kernel):
    with pytest.raises(ValueError):
        perturbation_curve(model, (0.1, 0.1, 0.1), kernel)


# --- return disk ----------------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.005, 0.01])
def test_return_disk_checks(model, kernel, shipped, eps):
    d = return_disk(model, shipped["disk_base"], kernel.with_epsilon(eps), resolution=11)
    assert d.passed, d.checks
    assert d.return_time == 5 and np.all(d.return_field == 5)
    assert np.max(np.abs(d.d_u - d.d_u_reference)) < 1e-6
    # in the linear regime the disk scales with epsilon
    assert d.diameter / eps == pytest.approx(25.25, rel=0.01)


def test_nonconstant_return_field_detected(model, kernel):
    with pytest.raises(ReturnTimeNotConstant):
        return_disk(model, (0.7, 0.1, 0.1), kernel.with_epsilon(0.02), resolution=11, require_full=True)


# --- inner ball -------------------------------------------------------------------------

def test_covered_radius_examples():
    c = np.zeros(3)
    assert covered_radius(np.zeros((1, 3)), c, 0.1) == 0.0
    g = np.arange(-3, 4) * 0.1
    cube = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    # nearest unvisited cell is 4 cells out along an axis: gap 3.5 cells, less half a cell
    assert covered_radius(cube, c, 0.1) == pytest.approx(0.3)
    assert covered_radius(np.full((2, 3), np.nan), c, 0.1) == 0.0


@given(st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=1, max_size=80), st.tuples(*[st.integers(-3, 3)] * 3))
def test_covered_radius_is_monotone(cells, extra):
    pts = np.array(cells, float) * 0.1
    more = np.vstack([pts, np.array(extra, float) * 0.1])
    assert covered_radius(more, np.zeros(3), 0.1) >= covered_radius(pts, np.zeros(3), 0.1)


def test_inscribed_radius_of_scaled_identity():
    assert inscribed_radius(2 * np.eye(3), 0.5) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def ball(model, kernel, shipped):
    return verify_ball(model, kernel, shipped["regular"][0], n_sequences=5000, seed=1)


def test_ball_around_regular_point(ball, kernel):
    assert ball.returns == (5, 10, 15)
    assert ball.radius > 0 and ball.K_empirical == pytest.approx(ball.radius / kernel.epsilon)
    assert ball.sigma_min > 0.1
    assert ball.radius == max(ball.radii)


def test_three_return_derivative_columns(model, kernel, shipped):
    x = shipped["regular"][0]
    D = three_return_derivative(model, x, kernel.t0, (5, 10, 15))
    # the last return's parameter enters through the fold alone, moving along (1, A)
    col = D[:, 2] / D[0, 2]
    assert np.allclose(col, [1.0, *model.A], atol=1e-6)


def test_single_sequence_certifies_nothing(model, kernel, shipped):
    r = verify_ball(model, kernel, shipped["regular"][0], n_sequences=1, seed=1, grid_spacing=1e-4)
    assert r.radius == 0.0


def test_more_sequences_do_not_shrink_the_ball(model, kernel, shipped, ball):
    r = verify_ball(model, kernel, shipped["regular"][0], n_sequences=1000, seed=1,
                    grid_spacing=ball.grid_spacing)
    # same seed, so the 1000 endpoints are a subset of the 5000
    assert r.radius <= ball.radius


def test_saddle_fails_screen(model, kernel):
    with pytest.raises(ScreenFailed):
        verify_ball(model, kernel, (0, 0, 0), n_sequences=10)
