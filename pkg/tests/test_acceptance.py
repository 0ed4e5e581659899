"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import filecmp
import os
import subprocess
import sys
import time
from pathlib import Path

import numba
import numpy as np
import pytest

from randtangency.cli import main
from randtangency.geometry import (ConeParams, perturbation_curve, return_disk, verify_ball,
                                   verify_return_cone)
from randtangency.measures import (Grid3, Histogram, abs_continuity_diagnostic, basin_partition, build_ulam,
                                   cesaro_measure, components_for, mixture_fit, mutual_singularity,
                                   operator_from_matrix, stationarity_residual, stationary_components)
from randtangency.model import jacobian, step
from randtangency.orbits import random_orbit


# --- 1 ----------------------------------------------------------------------------

def _fd_jacobian(p, x, t, h=1e-6):
    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (np.array(step(p, x + e, t)) - np.array(step(p, x - e, t))) / (2 * h)
    return J


def test_criterion_01_jacobian_fidelity(model, report_criterion):
    rng = np.random.default_rng(2024)
    R = model.regions.R_box
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    while n < 1000:
        if n % 2:
            x = rng.uniform(np.array(R.lo) + 1e-5, np.array(R.hi) - 1e-5)
        else:
            x = rng.uniform(-2.19, 2.19, 3)
            if R.expanded(1e-5).contains(x):
                continue
        t = rng.uniform(0.0, model.t_star)
        J = jacobian(model, x, t)
        worst = max(worst, np.max(np.abs(J - _fd_jacobian(model, x, t))) / np.max(np.abs(J)))
        n += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 5
    report_criterion(1, "Jacobian fidelity", ok, f"max rel err {worst:.2e} over {n} samples, {dt:.2f}s")
    assert ok


# --- 2 ----------------------------------------------------------------------------

def test_criterion_02_stationarity(model, kernel, report_criterion):
    t0 = time.perf_counter()
    res, worst_pi = {}, 0.0
    for r in (32, 64, 128):
        ms = components_for(model, kernel, r, 64, seed=0)
        worst_pi = max([worst_pi] + [c.residual for c in ms.components])
        res[r] = stationarity_residual(ms.physical[0].histogram(ms.grid), model, kernel).value
    dt = time.perf_counter() - t0
    ratio = res[64] / res[128]
    ok = worst_pi <= 1e-10 and ratio >= 2 and dt < 60
    report_criterion(2, "stationarity", ok,
                     f"max |piP-pi|_1 {worst_pi:.1e}; residual 32/64/128 = "
                     f"{res[32]:.2e}/{res[64]:.2e}/{res[128]:.2e}; 64->128 ratio {ratio:.1f} "
                     f"(32->64 {res[32] / res[64]:.2f}); {dt:.1f}s")
    assert ok


# --- 3 ----------------------------------------------------------------------------

def test_criterion_03_finiteness(model, kernel, report_criterion):
    t0 = time.perf_counter()
    counts = {}
    for eps in (0.005, 0.01, 0.02):
        k = kernel.with_epsilon(eps)
        counts[eps] = tuple(components_for(model, k, r, 64, seed=0).count_l for r in (48, 96))
    dt = time.perf_counter() - t0
    ok = all(a == b for a, b in counts.values()) and dt < 300
    detail = "; ".join(f"eps {e}: {a} at 48, {b} at 96" for e, (a, b) in counts.items())
    report_criterion(3, "finiteness", ok, f"{detail}; {dt:.1f}s")
    assert ok


# --- 4 ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def comps64(model, kernel):
    return components_for(model, kernel, 64, 64, seed=0)


def test_criterion_04_mutual_singularity(model, kernel, shipped, comps64, report_criterion):
    full = [c.full(comps64.grid.n_cells) for c in comps64.components]
    pairs = [mutual_singularity(full[i], full[j]) for i in range(len(full)) for j in range(i)]
    # a chain with three closed classes exercises the overlap with l > 1
    P = np.zeros((6, 6))
    P[0, 1] = P[1, 0] = P[2, 3] = P[3, 2] = P[4, 5] = P[5, 4] = 1.0
    toy = stationary_components(operator_from_matrix(P))
    tf = [c.full(6) for c in toy.components]
    pairs += [mutual_singularity(tf[i], tf[j]) for i in range(3) for j in range(i)]
    support = comps64.physical[0].cells
    own = []
    for x in shipped["recurrent"][:4]:
        h = cesaro_measure(model, kernel, x, 10_000, 20, comps64.grid, seed=4)
        own.append(float(h.masses[support].sum()))
    ok = all(p == 0.0 for p in pairs) and min(own) >= 0.95
    report_criterion(4, "mutual singularity", ok,
                     f"{len(pairs)} distinct pairs, max overlap {max(pairs):.1f} "
                     f"({len(comps64.components)} closed classes at 64^3, 1 physical); "
                     f"Cesaro own-support mass min {min(own):.4f}")
    assert ok


# --- 5 ----------------------------------------------------------------------------

def test_criterion_05_absolute_continuity(model, kernel, comps64, report_criterion):
    c128 = components_for(model, kernel, 128, 64, seed=0)
    rep = abs_continuity_diagnostic([comps64.physical[0].histogram(comps64.grid),
                                     c128.physical[0].histogram(c128.grid)])
    x = np.array(model.regions.Q_box.center)
    dirac = abs_continuity_diagnostic([Histogram.point_mass(Grid3.covering(model, r), x) for r in (64, 128)])
    ok = rep.bounded and not dirac.bounded
    report_criterion(5, "absolute continuity proxy", ok,
                     f"component max-density ratio 64->128 {rep.ratios[0]:.2f}; "
                     f"Dirac control {dirac.ratios[0]:.1f} flagged")
    assert ok


# --- 6 ----------------------------------------------------------------------------

def test_criterion_06_return_cone(model, kernel, report_criterion):
    t0 = time.perf_counter()
    r = verify_return_cone(model, kernel, ConeParams(10.0, 0.2), n_samples=1000, seed=0)
    dt = time.perf_counter() - t0
    ok = r.n_samples == 1000 and r.pass_fraction_all == 1.0 and dt < 30
    report_criterion(6, "return cone", ok,
                     f"{r.pass_fraction_all:.0%} of {r.n_samples} ({r.n_excluded} excluded); "
                     f"max slope {r.max_return_slope:.4f}, min norm ratio {r.min_norm_ratio:.3f}, "
                     f"max angle {r.max_angle_to_B:.4f}, eta {r.eta:.3f}; {dt:.1f}s")
    assert ok


# --- 7 ----------------------------------------------------------------------------

def test_criterion_07_return_disk(model, kernel, shipped, report_criterion):
    y = shipped["disk_base"]
    d = return_disk(model, y, kernel, resolution=21, seed=0)
    curve = perturbation_curve(model, y, kernel, 1000)
    analytic = np.array([1.0, *model.A])
    err = float(np.max(np.abs(curve.derivative - analytic)))
    four = ("slope_du_at_least_c0", "slope_ds_at_most_b0", "norm_ds_at_least_B_over_10", "norm_du_at_least_half")
    ok = all(d.checks[k]["passed"] for k in four) and err <= 1e-8
    ext = ", ".join(f"{k} {d.checks[k]['extreme']:.3g}" for k in four)
    report_criterion(7, "return disk", ok,
                     f"patch {d.points.shape[0]}x{d.points.shape[1]} nodes, return time {d.return_time}; "
                     f"{ext}; curve derivative err {err:.1e}")
    assert ok


# --- 8 ----------------------------------------------------------------------------

def test_criterion_08_inner_ball(model, kernel, shipped, report_criterion):
    pts = shipped["regular"]
    lines, ok = [], len(pts) >= 3
    for x in pts:
        t0 = time.perf_counter()
        reps = [verify_ball(model, kernel.with_epsilon(e), x, n_sequences=10_000, seed=0) for e in (0.005, 0.01)]
        dt = time.perf_counter() - t0
        Ks = [r.K_empirical for r in reps]
        good = (all(r.radius > 0 for r in reps) and max(Ks) <= 2 * min(Ks)
                and all(r.sigma_min >= 1e-3 for r in reps) and dt < 240)
        ok &= good
        lines.append(f"K {Ks[0]:.4f}/{Ks[1]:.4f} sigma_min {reps[1].sigma_min:.4f}")
    report_criterion(8, "inner ball", ok, f"{len(pts)} points: " + "; ".join(lines))
    assert ok


# --- 9 ----------------------------------------------------------------------------

def test_criterion_09_basin_partition(model, kernel, shipped, comps64, report_criterion):
    x = shipped["recurrent"][0]
    bp = basin_partition(model, kernel, x, comps64, 1000, 10_000, seed=0)
    h = cesaro_measure(model, kernel, x, 10_000, 1000, comps64.grid, seed=0)
    w = mixture_fit(h, comps64)
    total = float(np.sum(bp.alpha) + bp.unassigned)
    se = bp.standard_errors
    within = np.abs(bp.alpha - w) <= 2 * se + 1e-12
    ok = abs(total - 1) <= 1e-15 and bp.unassigned <= 0.05 and bool(np.all(within))
    report_criterion(9, "basin partition", ok,
                     f"alpha {np.round(bp.alpha, 4).tolist()} unassigned {bp.unassigned}; sum-1 {total - 1:.1e}; "
                     f"mixture {np.round(w, 4).tolist()} (2 SE {np.round(2 * se, 4).tolist()})")
    assert ok


# --- 10 ---------------------------------------------------------------------------

DET_CONFIG = """
[run]
steps = 500
n_sequences = 50
horizon = 5000
burn_in = 200
resolutions = [24, 32]
samples_per_cell = 32
cesaro_steps = 1000
basin_sequences = 50
basin_horizon = 2000
cone_samples = 100
curve_resolution = 100
disk_resolution = 9
ball_sequences = 2000
regular_points = [[0.0652, 1.0048, 0.958], [0.0549, 1.0289, 0.9816]]
write_operator = true
"""

COMMANDS = ("validate", "orbit", "returns", "recurrence", "measures", "basin", "geometry", "ball")


def _same_tree(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_criterion_10_determinism(tmp_path, report_criterion):
    cfg = tmp_path / "det.toml"
    cfg.write_text(DET_CONFIG)
    before = numba.get_num_threads()
    bad = []
    try:
        for cmd in COMMANDS:
            outs = []
            for tag, threads in (("a", 1), ("b", 8), ("c", 8)):
                d = tmp_path / f"{cmd}_{tag}"
                assert main([cmd, "--config", str(cfg), "--out", str(d), "--threads", str(threads)]) == 0
                outs.append(d)
            if not (_same_tree(outs[0], outs[1]) and _same_tree(outs[1], outs[2])):
                bad.append(cmd)
    finally:
        numba.set_num_threads(before)
    # one run through a fresh interpreter
    d = tmp_path / "orbit_sub"
    env = dict(os.environ)
    subprocess.run([sys.executable, "-m", "randtangency.cli", "orbit", "--config", str(cfg), "--out", str(d),
                    "--threads", "8"], check=True, env=env, capture_output=True)
    sub_ok = _same_tree(d, tmp_path / "orbit_a")
    ok = not bad and sub_ok
    report_criterion(10, "determinism", ok,
                     f"{len(COMMANDS) - len(bad)}/{len(COMMANDS)} commands byte-identical across "
                     f"--threads 1/8/8 reruns; fresh-process rerun {'identical' if sub_ok else 'differs'}")
    assert ok


# --- 11 ---------------------------------------------------------------------------

def test_criterion_11_performance(model, kernel, shipped, report_criterion):
    before = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        random_orbit(model, kernel, shipped["recurrent"][0], 1000, seed=0)  # compile
        t0 = time.perf_counter()
        rec = random_orbit(model, kernel, shipped["recurrent"][0], 1_000_000, seed=0)
        t_orbit = time.perf_counter() - t0
        numba.set_num_threads(min(8, numba.config.NUMBA_NUM_THREADS))
        t0 = time.perf_counter()
        build_ulam(model, kernel, Grid3.covering(model, 64), 64, seed=0)
        t_ulam = time.perf_counter() - t0
    finally:
        numba.set_num_threads(before)
    ok = rec.escaped_at is None and t_orbit < 1 and t_ulam < 120
    report_criterion(11, "performance", ok,
                     f"1e6 orbit steps {t_orbit:.2f}s (1 thread); Ulam 64^3 x 64 {t_ulam:.1f}s "
                     f"({numba.config.NUMBA_NUM_THREADS} workers, {os.cpu_count()} CPU)")
    assert ok
