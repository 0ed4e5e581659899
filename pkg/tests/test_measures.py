import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from randtangency.model import Box, ModelParams
from randtangency.noise import NoiseKernel
from randtangency.orbits import get_observable
from randtangency.measures import (Grid3, Histogram, PhysicalMeasureSet, UlamOperator, abs_continuity_diagnostic,
                                   basin_partition, build_ulam, cesaro_measure, closed_classes, component_csv,
                                   component_means, components_for, mixture_distance, mixture_fit,
                                   mutual_singularity, operator_from_matrix, overlap_matrix,
                                   stationarity_residual, stationary_components, stationary_vector, summary,
                                   total_variation)


@pytest.fixture(scope="module")
def ulam48(model, kernel):
    return build_ulam(model, kernel, Grid3.covering(model, 48), 64, seed=0)


@pytest.fixture(scope="module")
def comps48(model, ulam48):
    return stationary_components(ulam48, q_box=model.regions.Q_box)


@pytest.fixture(scope="module")
def comps64(model, kernel):
    return components_for(model, kernel, 64, 64, seed=0)


# --- grid and histograms ----------------------------------------------------

def test_grid_indexing():
    g = Grid3((0, 0, 0), (1, 2, 4), (2, 2, 2))
    assert g.n_cells == 8 and g.outside == 8
    assert np.allclose(g.spacing, [0.5, 1, 2]) and g.cell_volume == 1.0
    assert list(g.index_of([[0.1, 0.1, 0.1], [0.9, 1.9, 3.9], [1.0, 2.0, 4.0], [1.1, 0, 0]])) == [0, 7, 7, -1]
    assert np.allclose(g.centers([0, 7]), [[0.25, 0.5, 1], [0.75, 1.5, 3]])
    assert g.refined().res == (4, 4, 4)


@given(st.tuples(st.floats(0, 0.999), st.floats(0, 1.999), st.floats(0, 3.999)))
def test_point_lies_in_its_cell(x):
    g = Grid3((0, 0, 0), (1, 2, 4), (5, 7, 3))
    i = g.index_of(x)[0]
    c = g.centers([i])[0]
    assert np.all(np.abs(np.asarray(x) - c) <= 0.5 * g.spacing + 1e-12)


def test_total_variation_examples():
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0


# --- Cesaro averages --------------------------------------------------------------

def test_cesaro_single_term_is_dirac(model, kernel):
    g = Grid3.covering(model, 16)
    x = (0.3, 0.9, 0.9)
    h = cesaro_measure(model, kernel, x, 1, 5, g, seed=1)
    assert np.array_equal(h.masses, Histogram.point_mass(g, x).masses)


def test_cesaro_at_saddle(model, kernel):
    g = Grid3.covering(model, 16)
    h = cesaro_measure(model, kernel, (0, 0, 0), 100, 3, g, seed=1)
    assert h.masses[g.index_of((0, 0, 0))[0]] == 1.0 and h.escaped_mass == 0


def test_cesaro_escape_goes_to_escaped_mass(model, kernel):
    g = Grid3.covering(model, 16)
    h = cesaro_measure(model, kernel, (2.1, 0, 0), 10, 2, g, seed=1)
    assert h.escaped_mass == pytest.approx(1.0) and h.total == pytest.approx(1.0)


def test_cesaro_is_self_consistent(model, kernel, shipped):
    g = Grid3.covering(model, 48)
    x0 = shipped["recurrent"][0]
    a = cesaro_measure(model, kernel, x0, 10_000, 100, g, seed=1)
    b = cesaro_measure(model, kernel, x0, 20_000, 100, g, seed=2)
    assert a.escaped_mass == 0 and a.total == pytest.approx(1.0)
    assert total_variation(a.masses, b.masses) < 0.02


# --- Ulam operator ------------------------------------------------------------

def test_single_cell_toy_chain():
    p = ModelParams().replace(a=-0.01, A=(0.0, 0.0), B=(0.01, 0.01), b=(0.0, 0.0), C=((0, 0), (0, 0)),
                              q0=(0.0, 0.0))
    k = NoiseKernel.uniform(1.0, 0.01)
    R = p.regions.R_box
    g = Grid3(R.lo, R.hi, (1, 1, 1))
    U = build_ulam(p, k, g, 200, seed=0)
    assert U.transitions[0, 0] == 1.0
    ms = stationary_components(U)
    assert len(ms.components) == 1 and ms.components[0].density.tolist() == [1.0]


def test_rows_are_stochastic(ulam48):
    assert ulam48.row_sum_error() < 1e-12
    T = ulam48.transitions
    assert T[ulam48.grid.outside, ulam48.grid.outside] == 1.0
    # entries are sample counts over S
    assert np.allclose(np.round(T.data * 64), T.data * 64)


def test_transition_estimates_shrink_like_binomial(model, kernel):
    g = Grid3.covering(model, 12)
    errs = []
    for S in (16, 256):
        A = build_ulam(model, kernel, g, S, seed=1).transitions
        B = build_ulam(model, kernel, g, S, seed=2).transitions
        errs.append(abs(A - B).sum(axis=1).mean())
    # 16x samples: row error falls by about 4
    assert 2.5 < errs[0] / errs[1] < 6.5


def test_ulam_is_seed_deterministic(model, kernel):
    g = Grid3.covering(model, 12)
    a = build_ulam(model, kernel, g, 32, seed=3).transitions
    b = build_ulam(model, kernel, g, 32, seed=3).transitions
    assert (a != b).nnz == 0


def test_coo_round_trip(model, kernel):
    g = Grid3.covering(model, 10)
    U = build_ulam(model, kernel, g, 16, seed=1)
    V = UlamOperator.from_coo_text(U.coo_text(), g, 16)
    assert (U.transitions != V.transitions).nnz == 0


def test_rejects_bad_sample_counts(model, kernel):
    with pytest.raises(ValueError):
        build_ulam(model, kernel, Grid3.covering(model, 4), 0, seed=0)
    with pytest.raises(ValueError):
        build_ulam(model, kernel, Grid3.covering(model, 4), 70000, seed=0)


# --- closed classes and stationary vectors -------------------------------------------

def test_closed_classes_edge_cases():
    # 0 -> 1 <-> 2, 3 self loop, 4 leaks only
    P = sp.csr_matrix(np.array([[0, 1, 0, 0, 0], [0, 0, 1, 0, 0], [0, 1, 0, 0, 0],
                                [0, 0, 0, 1, 0], [0, 0, 0, 0, 0.0]]))
    assert [c.tolist() for c in closed_classes(P)] == [[1, 2], [3]]
    # a cyclic class that feeds another cyclic class is not closed
    P = sp.csr_matrix(np.array([[0.5, 0.5, 0], [0, 0, 1], [0, 1, 0.0]]))
    assert [c.tolist() for c in closed_classes(P)] == [[1, 2]]
    assert closed_classes(sp.csr_matrix((3, 3))) == []


def test_two_state_stationary_vector():
    S = sp.csr_matrix([[0.9, 0.1], [0.3, 0.7]])
    pi, res = stationary_vector(S)
    assert np.allclose(pi, [0.75, 0.25]) and res < 1e-12


def test_periodic_chain_is_solved():
    S = sp.csr_matrix(np.roll(np.eye(5), 1, axis=1))
    pi, res = stationary_vector(S)
    assert np.allclose(pi, 0.2) and res < 1e-12


@given(st.integers(2, 8), st.integers(0, 2 ** 31))
def test_stationary_vector_of_random_chain(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.random((n, n)) + 0.01
    M /= M.sum(axis=1, keepdims=True)
    pi, res = stationary_vector(sp.csr_matrix(M))
    w, v = np.linalg.eig(M.T)
    ref = np.real(v[:, np.argmin(np.abs(w - 1))])
    assert np.allclose(pi, ref / ref.sum(), atol=1e-9)


def test_toy_chain_components_are_disjoint():
    P = np.zeros((6, 6))
    P[0, 1] = P[1, 0] = 1.0
    P[2, 3] = P[3, 2] = 0.5
    P[2, 2] = P[3, 3] = 0.5
    P[4, 0] = P[4, 2] = 0.5
    P[5, 5] = 0.5  # leaks half its mass off the grid
    ms = stationary_components(operator_from_matrix(P))
    assert [c.cells.tolist() for c in ms.components] == [[0, 1], [2, 3], [5]]
    assert ms.components[2].leak == pytest.approx(0.5)
    O = overlap_matrix(ms, physical_only=False)
    assert np.allclose(O, np.eye(3))


def test_default_model_has_one_physical_component(comps48, comps64):
    for ms in (comps48, comps64):
        assert ms.count_l == 1
        c = ms.physical[0]
        assert c.residual <= 1e-10 and c.density.sum() == pytest.approx(1.0)


def test_real_closed_classes_are_mutually_singular(comps48):
    comps = comps48.components
    assert len(comps) >= 2
    full = [c.full(comps48.grid.n_cells) for c in comps]
    for i in range(len(full)):
        assert mutual_singularity(full[i], full[i]) == pytest.approx(1.0)
        for j in range(i):
            assert mutual_singularity(full[i], full[j]) == 0.0


# --- stationarity residual ------------------------------------------------------

def test_residual_of_fixed_point_mass(model, kernel):
    g = Grid3.covering(model, 32)
    mu = Histogram.point_mass(g, (0, 0, 0))
    obs = [get_observable(n, model) for n in ("z", "x1", "x2")]
    rep = stationarity_residual(mu, model, kernel, obs)
    c = g.centers(g.index_of((0, 0, 0)))[0]
    # image of the centre is (sigma c_z, lambda1 c_x1, lambda2 c_x2)
    expected = abs(c * (1 - np.array([model.sigma, model.lambda1, model.lambda2])))
    assert np.allclose([rep.per_observable[n] for n in ("z", "x1", "x2")], expected, atol=1e-15)
    assert rep.value <= 5 * g.spacing.max()


def test_residual_shrinks_with_resolution(model, kernel, comps48, comps64):
    r48 = stationarity_residual(comps48.physical[0].histogram(comps48.grid), model, kernel).value
    r64 = stationarity_residual(comps64.physical[0].histogram(comps64.grid), model, kernel).value
    assert r64 < r48 and r64 < 1e-2


def test_residual_reports_escape(model, kernel):
    g = Grid3.covering(model, 16)
    mu = Histogram.point_mass(g, (1.35, 0.0, 0.35))
    assert stationarity_residual(mu, model, kernel).escaped_weight >= 0


# --- absolute continuity -----------------------------------------------------------

def test_abs_continuity_controls(model):
    box = Box((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))  # aligned with every grid
    uniform, dirac = [], []
    for r in (16, 32, 64):
        g = Grid3((0, 0, 0), (1, 1, 1), (r, r, r))
        cells = g.cells_in_box(box)
        uniform.append(Histogram.from_density(g, cells, np.ones(len(cells))))
        dirac.append(Histogram.point_mass(g, (0.3001, 0.3001, 0.3001)))
    u = abs_continuity_diagnostic(uniform)
    d = abs_continuity_diagnostic(dirac)
    assert u.bounded and np.allclose(u.ratios, 1.0)
    assert not d.bounded and np.allclose(d.ratios, 8.0)


# --- basins and mixtures -------------------------------------------------------------

def test_basin_of_recurrent_point(model, kernel, shipped, comps64):
    bp = basin_partition(model, kernel, shipped["recurrent"][0], comps64, 100, 5000, seed=1)
    assert bp.alpha.tolist() == [1.0] and bp.unassigned == 0.0
    assert bp.to_dict()["sum"] == 1.0


def test_saddle_is_unassigned(model, kernel, comps64):
    bp = basin_partition(model, kernel, (0, 0, 0), comps64, 20, 1000, seed=1)
    assert bp.unassigned == 1.0 and bp.alpha.sum() == 0


def test_mixture_fit_recovers_weights():
    P = np.zeros((6, 6))
    P[0, 1] = P[1, 0] = 1.0
    P[2, 3] = P[3, 2] = 1.0
    P[4, 5] = P[5, 4] = 1.0
    op = operator_from_matrix(P)
    ms = stationary_components(op, q_box=Box((0, 0, 0), (6, 1, 1)))
    w_true = np.array([0.2, 0.5, 0.3])
    mix = sum(w * c.full(6) for w, c in zip(w_true, ms.physical))
    h = Histogram(op.grid, mix)
    w = mixture_fit(h, ms)
    assert np.allclose(w, w_true, atol=1e-8)
    assert mixture_distance(h, ms, w) < 1e-8


def test_component_means_and_exports(model, comps48):
    means = component_means(comps48, model)
    assert means.shape == (1, 7)
    assert 0 < means[0, 6] < 1
    text = component_csv(comps48.grid, comps48.physical[0])
    assert text.splitlines()[0] == "cell,z,x1,x2,mass"
    s = summary(comps48)
    assert s["count_l"] == 1 and s["overlap"] == [[1.0]]


# --- cross-method agreement ------------------------------------------------------

def _cross_tv(model, kernel, shipped, comps):
    g = comps.grid
    ces = cesaro_measure(model, kernel, shipped["recurrent"][0], 10_000, 200, g, seed=1)
    return total_variation(ces.masses, comps.physical[0].full(g.n_cells))


def test_cesaro_and_ulam_agree_to_pinned_level(model, kernel, shipped, comps64):
    # regression pin; see the strict agreement check below
    assert _cross_tv(model, kernel, shipped, comps64) <= 0.35


@pytest.mark.xfail(strict=True, reason="Ulam discretization smears the thin attractor; TV about 0.28 at 64^3")
def test_cesaro_and_ulam_agree_within_tenth(model, kernel, shipped, comps64):
    assert _cross_tv(model, kernel, shipped, comps64) <= 0.1
