"""Numerical checks of the cone, return-disk and inner-ball geometry.

Three verifiers are provided.

* :func:`verify_return_cone` pushes near-vertical tangent vectors from Q to
  their first return and measures slope, stretching and alignment with B.
* :func:`return_disk` builds the two-parameter family
  ``gamma(u, s) = f_u(f_v^{R-1}(f_s y))`` and checks its partial derivatives.
* :func:`verify_ball` measures how much of a ball around the unperturbed
  orbit point is reached after three returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

from . import _kernels as K
from ._rng import TAG_INTERIOR, TAG_SAMPLE_POINT, TAG_SAMPLE_VECTOR, stream_key, uniform_from_key
from .model import EscapedError, ModelParams, line_angle, norm_max, parameter_derivative, slope, slopes
from .noise import NoiseKernel, RejectionBudgetExceeded, sample_values
from .orbits import classify_recurrence, deterministic_orbit, endpoints


class ReturnTimeNotConstant(RuntimeError):
    """The sampled disk straddles a change of return time."""


class ScreenFailed(RuntimeError):
    """The point is not regular for this kernel."""


@dataclass(frozen=True)
class ConeParams:
    c0: float = 10.0
    b0: float = 0.2

    def __post_init__(self):
        if not (0 < self.b0 < 1 < self.c0):
            raise ValueError("cone parameters need 0 < b0 < 1 < c0")


def propagate_tangent(model: ModelParams, x, t_list: Sequence[float], v) -> np.ndarray:
    """Image of ``v`` under the derivative of the composed maps along the orbit."""
    P = model.packed()
    w = np.asarray(v, float).copy()
    y = np.asarray(x, float).copy()
    J = np.empty((3, 3))
    for t in t_list:
        if not K.jacobian_point(P, y[0], y[1], y[2], float(t), J):
            raise EscapedError(f"orbit escaped at {tuple(y)}")
        w = J @ w
        y = np.array(K.step_point(P, y[0], y[1], y[2], float(t)))
        if math.isnan(y[0]):
            raise EscapedError("orbit escaped")
    return w


# --- cone verifier ----------------------------------------------------------

@njit(cache=True, parallel=True)
def _cone_batch(P, G, kp, kb, kc, seed, start, n, qlo, qhi, inv_c0, max_steps):
    X = np.empty((n, 3))
    V = np.empty((n, 3))
    W = np.full((n, 3), np.nan)
    steps = np.full(n, -1, np.int64)
    linear = np.zeros(n, np.int64)
    for r in prange(n):
        idx = start + r
        kx = stream_key(seed, np.uint64(TAG_SAMPLE_POINT) + np.uint64(idx))
        kv = stream_key(seed, np.uint64(TAG_SAMPLE_VECTOR) + np.uint64(idx))
        kt = stream_key(seed, np.uint64(idx))
        for i in range(3):
            X[r, i] = qlo[i] + (qhi[i] - qlo[i]) * uniform_from_key(kx, i)
        if idx == 0:
            V[r, 0], V[r, 1], V[r, 2] = 1.0, 0.0, 0.0
        else:
            sgn = 1.0 if uniform_from_key(kv, 0) < 0.5 else -1.0
            V[r, 0] = sgn
            V[r, 1] = inv_c0 * (2.0 * uniform_from_key(kv, 1) - 1.0)
            V[r, 2] = inv_c0 * (2.0 * uniform_from_key(kv, 2) - 1.0)
        z, x1, x2 = X[r, 0], X[r, 1], X[r, 2]
        w0, w1, w2 = V[r, 0], V[r, 1], V[r, 2]
        J = np.empty((3, 3))
        for k in range(max_steps):
            t = K.draw_t(kp, kb, kc, kt, k)
            if not K.jacobian_point(P, z, x1, x2, t, J):
                break
            if J[0, 1] == 0.0 and J[1, 0] == 0.0:
                linear[r] += 1
            a0 = J[0, 0] * w0 + J[0, 1] * w1 + J[0, 2] * w2
            a1 = J[1, 0] * w0 + J[1, 1] * w1 + J[1, 2] * w2
            a2 = J[2, 0] * w0 + J[2, 1] * w1 + J[2, 2] * w2
            w0, w1, w2 = a0, a1, a2
            z, x1, x2 = K.step_point(P, z, x1, x2, t)
            if z != z:
                break
            if K.in_Q(G, z, x1, x2):
                steps[r] = k + 1
                W[r, 0], W[r, 1], W[r, 2] = w0, w1, w2
                break
    return X, V, W, steps, linear


@dataclass(frozen=True)
class SlopeReport:
    n_samples: int
    n_excluded: int
    pass_fraction_slope: float
    pass_fraction_norm: float
    pass_fraction_angle: float
    pass_fraction_all: float
    max_return_slope: float
    min_norm_ratio: float
    max_angle_to_B: float
    vertical_return_slope: float
    min_linear_steps: int
    eta: float
    cone: ConeParams
    failures: tuple = ()

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("cone", "failures")}
        d["c0"], d["b0"] = self.cone.c0, self.cone.b0
        d["failures"] = [{"sample": int(i), "x": list(map(float, x)), "v": list(map(float, v))}
                         for i, x, v in self.failures]
        return d


def verify_return_cone(model: ModelParams, kernel: NoiseKernel, cone: ConeParams = ConeParams(),
                       n_samples: int = 1000, seed: int = 0, q_box=None, max_steps: int = 200,
                       max_draws: Optional[int] = None) -> SlopeReport:
    """Check the cone conclusions on ``n_samples`` returning samples.

    Sample ``i`` takes a uniform point of Q (or ``q_box``), a tangent vector
    ``(+-1, w1, w2)`` with ``|w_i| <= 1/c0`` (sample 0 is exactly vertical)
    and noise stream ``i``; it is followed to its first return to Q.  A
    returning sample passes when the returned vector has slope at most
    ``b0``, max-norm at least ``|B|/10`` times the initial one, and its line
    makes an angle at most ``b0`` with ``(0, B)``.  Samples that escape or do
    not return within ``max_steps`` are excluded and counted.
    """
    q_box = model.regions.Q_box if q_box is None else q_box
    P, G = model.packed(), model.regions.packed()
    kp, kb, kc = kernel.packed
    max_draws = max_draws or 20 * n_samples
    Xs, Vs, Ws, Ks = [], [], [], []
    got, drawn = 0, 0
    while got < n_samples and drawn < max_draws:
        m = min(max(2 * (n_samples - got), 64), max_draws - drawn)
        X, V, W, steps, lin = _cone_batch(P, G, kp, kb, kc, np.uint64(seed), drawn, m, np.asarray(q_box.lo),
                                          np.asarray(q_box.hi), 1.0 / cone.c0, max_steps)
        ok = np.flatnonzero(steps > 0)[: n_samples - got]
        ids = drawn + ok
        Xs.append(X[ok]); Vs.append(V[ok]); Ws.append(W[ok]); Ks.append(np.stack([ids, lin[ok]], 1))
        got += len(ok)
        drawn += m
    X, V, W, KL = (np.concatenate(a) for a in (Xs, Vs, Ws, Ks))
    B = np.array([0.0, *model.B])
    s_ret = slopes(W)
    nr = np.max(np.abs(W), axis=1) / np.max(np.abs(V), axis=1)
    ang = np.array([line_angle(w, B) for w in W])
    ok_s = s_ret <= cone.b0
    ok_n = nr >= model.B_norm / 10
    ok_a = ang <= cone.b0
    ok = ok_s & ok_n & ok_a
    fails = tuple((KL[i, 0], X[i], V[i]) for i in np.flatnonzero(~ok)[:20])
    vert = s_ret[KL[:, 0] == 0]
    return SlopeReport(
        n_samples=int(got), n_excluded=int(KL[-1, 0] + 1 - got) if got else int(drawn),
        pass_fraction_slope=float(ok_s.mean()), pass_fraction_norm=float(ok_n.mean()),
        pass_fraction_angle=float(ok_a.mean()), pass_fraction_all=float(ok.mean()),
        max_return_slope=float(s_ret.max()), min_norm_ratio=float(nr.min()), max_angle_to_B=float(ang.max()),
        vertical_return_slope=float(vert[0]) if len(vert) else math.nan,
        min_linear_steps=int(KL[:, 1].min()), eta=model.cone_rate, cone=cone, failures=fails)


# --- perturbation curve -----------------------------------------------------

@dataclass(frozen=True)
class CurveReport:
    s: np.ndarray
    points: np.ndarray
    derivative: np.ndarray
    analytic: np.ndarray
    min_slope: float
    min_speed: float
    max_error: float

    def passes(self, cone: ConeParams = ConeParams()) -> bool:
        return self.min_slope >= cone.c0 and self.min_speed >= 0.5

    def to_dict(self) -> dict:
        return {"resolution": len(self.s), "min_slope": self.min_slope, "min_speed": self.min_speed,
                "max_error_vs_analytic": self.max_error}


def perturbation_curve(model: ModelParams, y, kernel: NoiseKernel, resolution: int = 1000) -> CurveReport:
    """The curve ``s -> f_s(y)`` over the kernel support and its derivative.

    The derivative is taken by differencing neighbouring grid nodes (one-sided
    at the ends) and compared with the exact parameter derivative of the fold.
    """
    y = np.asarray(y, float)
    if not model.regions.R_box.contains(y):
        raise ValueError("base point must lie in R")
    lo, hi = kernel.support
    s = np.linspace(lo, hi, resolution)
    P = model.packed()
    pts = np.array([K.step_point(P, y[0], y[1], y[2], float(v)) for v in s])
    if np.isnan(pts).any():
        raise EscapedError("curve leaves the modelled region")
    d = np.gradient(pts, s, axis=0, edge_order=2)
    exact = np.array([parameter_derivative(model, y, float(v)) for v in s])
    err = float(np.max(np.abs(d - exact)))
    return CurveReport(s, pts, d, exact, float(slopes(d).min()), float(np.max(np.abs(d), axis=1).min()), err)


# --- return disk --------------------------------------------------------------

@njit(cache=True)
def _disk_field(P, G, y, svals, uvals, v, max_steps):
    """Return time and point for every (u, s) node; time 0 means no return."""
    ns, nu = svals.shape[0], uvals.shape[0]
    R = np.zeros((nu, ns), np.int64)
    pts = np.full((nu, ns, 3), np.nan)
    for j in range(ns):
        z, x1, x2 = K.step_point(P, y[0], y[1], y[2], svals[j])
        if z != z:
            continue
        # x_s = f_s y; the return time counts the final fold step
        for k in range(max_steps):
            for i in range(nu):
                if R[i, j] == 0:
                    a, b, c = K.step_point(P, z, x1, x2, uvals[i])
                    if a == a and K.in_Q(G, a, b, c):
                        R[i, j] = k + 1
                        pts[i, j, 0], pts[i, j, 1], pts[i, j, 2] = a, b, c
            done = True
            for i in range(nu):
                if R[i, j] == 0:
                    done = False
            if done or k == max_steps - 1:
                break
            z, x1, x2 = K.step_point(P, z, x1, x2, v[k])
            if z != z:
                break
    return R, pts


def _gamma(P, y, s, u, v, R):
    z, x1, x2 = K.step_point(P, y[0], y[1], y[2], s)
    for k in range(R - 1):
        z, x1, x2 = K.step_point(P, z, x1, x2, v[k])
    return np.array(K.step_point(P, z, x1, x2, u))


def _largest_patch(R: np.ndarray) -> int:
    """Half-width of the largest centred square of nodes sharing the centre's value."""
    n0, n1 = R.shape
    c0, c1 = n0 // 2, n1 // 2
    target = R[c0, c1]
    if target == 0:
        return -1
    k = 0
    while (c0 - k - 1 >= 0 and c1 - k - 1 >= 0 and c0 + k + 1 < n0 and c1 + k + 1 < n1
           and np.all(R[c0 - k - 1:c0 + k + 2, c1 - k - 1:c1 + k + 2] == target)):
        k += 1
    return k


@dataclass(frozen=True)
class DiskSample:
    base: np.ndarray
    u: np.ndarray
    s: np.ndarray
    return_field: np.ndarray
    return_time: int
    patch: tuple
    interior: np.ndarray
    points: np.ndarray
    d_u: np.ndarray
    d_s: np.ndarray
    d_u_reference: np.ndarray
    checks: dict
    diameter: float

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"base": self.base.tolist(), "return_time": self.return_time,
                "patch": {"u": [float(self.u[0]), float(self.u[-1])], "s": [float(self.s[0]), float(self.s[-1])],
                          "nodes": list(self.points.shape[:2])},
                "checks": self.checks, "diameter": self.diameter,
                "d_u_max_error": float(np.max(np.abs(self.d_u - self.d_u_reference)))}


def return_disk(model: ModelParams, y, kernel: NoiseKernel, resolution: int = 21, seed: int = 0,
                cone: ConeParams = ConeParams(), max_steps: int = 100, require_full: bool = False) -> DiskSample:
    """Sample the return disk through ``y`` and check its partial derivatives.

    The interior sequence ``v`` is drawn from the kernel on a dedicated
    stream.  The return-time field over the ``(u, s)`` grid is measured and
    the checks run on the largest centred square where it is constant.
    Partials use central differences with step ``1e-6 * |t|``.  Raises
    :class:`ReturnTimeNotConstant` when no such square beyond the centre
    exists, or when ``require_full`` is set and the field is not constant.
    """
    y = np.asarray(y, float)
    if not model.regions.R_box.contains(y):
        raise ValueError("base point must lie in R")
    lo, hi = kernel.support
    grid = np.linspace(lo, hi, resolution)
    v = sample_values(kernel, max_steps, seed, TAG_INTERIOR)
    P, G = model.packed(), model.regions.packed()
    field_, _ = _disk_field(P, G, y, grid, grid, v, max_steps)
    k = _largest_patch(field_)
    full = k == (resolution - 1) // 2 and np.all(field_ == field_[0, 0])
    if k < 1 or (require_full and not full):
        raise ReturnTimeNotConstant(f"return time varies over the disk (patch half-width {k})")
    c = resolution // 2
    sl = slice(c - k, c + k + 1)
    us, ss = grid[sl], grid[sl]
    R = int(field_[c, c])
    n = len(us)
    pts = np.empty((n, n, 3))
    du = np.empty((n, n, 3))
    ds = np.empty((n, n, 3))
    duref = np.empty((n, n, 3))
    for i, u in enumerate(us):
        for j, s in enumerate(ss):
            pts[i, j] = _gamma(P, y, s, u, v, R)
            hu, hs = 1e-6 * abs(u), 1e-6 * abs(s)
            du[i, j] = (_gamma(P, y, s, u + hu, v, R) - _gamma(P, y, s, u - hu, v, R)) / (2 * hu)
            ds[i, j] = (_gamma(P, y, s + hs, u, v, R) - _gamma(P, y, s - hs, u, v, R)) / (2 * hs)
            pre = _gamma_pre(P, y, s, v, R)
            duref[i, j] = parameter_derivative(model, pre, u)
    du2, ds2 = du.reshape(-1, 3), ds.reshape(-1, 3)
    B = np.array([0.0, *model.B])
    su, sd = slopes(du2), slopes(ds2)
    nu, nd = np.max(np.abs(du2), 1), np.max(np.abs(ds2), 1)
    angs = np.array([line_angle(w, B) for w in ds2])
    checks = {
        "slope_du_at_least_c0": {"passed": bool(np.all(su >= cone.c0)), "extreme": float(su.min())},
        "slope_ds_at_most_b0": {"passed": bool(np.all(sd <= cone.b0)), "extreme": float(sd.max())},
        "norm_ds_at_least_B_over_10": {"passed": bool(np.all(nd >= model.B_norm / 10)), "extreme": float(nd.min())},
        "norm_du_at_least_half": {"passed": bool(np.all(nu >= 0.5)), "extreme": float(nu.min())},
        "angle_ds_B_at_most_b0": {"passed": bool(np.all(angs <= cone.b0)), "extreme": float(angs.max())},
    }
    flat = pts.reshape(-1, 3)
    diam = float(max(np.max(np.linalg.norm(flat - p, axis=1)) for p in flat))
    return DiskSample(y, us, ss, field_, R, (c - k, c + k), v[:R - 1].copy(), pts, du, ds, duref, checks, diam)


def _gamma_pre(P, y, s, v, R):
    z, x1, x2 = K.step_point(P, y[0], y[1], y[2], s)
    for k in range(R - 1):
        z, x1, x2 = K.step_point(P, z, x1, x2, v[k])
    return np.array([z, x1, x2])


# --- inner ball ---------------------------------------------------------------

@dataclass(frozen=True)
class BallReport:
    center: np.ndarray
    radius: float
    K_empirical: float
    n_sequences: int
    grid_spacing: float
    returns: tuple
    singular_values: np.ndarray
    linearized_radius: float
    spacings_tried: tuple = ()
    radii: tuple = ()

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values.min())

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius, "K_empirical": self.K_empirical,
                "n_sequences": self.n_sequences, "grid_spacing": self.grid_spacing,
                "returns": list(self.returns), "singular_values": [float(v) for v in self.singular_values],
                "sigma_min": f"{self.sigma_min:.6f}", "linearized_radius": self.linearized_radius,
                "spacings_tried": list(self.spacings_tried), "radii": list(self.radii)}


def covered_radius(points: np.ndarray, center, spacing: float) -> float:
    """Radius of the ball around ``center`` certified by visited cells.

    The lattice has a cell centred on ``center``.  The certificate is the
    distance from ``center`` to the nearest unvisited cell, less half a
    cell, so a lone visited cell certifies nothing.
    """
    pts = np.asarray(points, float)
    pts = pts[~np.isnan(pts).any(axis=1)]
    c = np.asarray(center, float)
    if len(pts) == 0:
        return 0.0
    ijk = np.unique(np.floor((pts - c) / spacing + 0.5).astype(np.int64), axis=0)
    # some cell within Chebyshev distance kc is unvisited, so no cell beyond m matters
    kc = int(math.ceil((len(ijk) ** (1 / 3) - 1) / 2)) + 1
    m = int(math.ceil(kc * math.sqrt(3))) + 1
    ijk = ijk[np.all(np.abs(ijk) <= m, axis=1)]
    vis = np.zeros((2 * m + 1,) * 3, bool)
    vis[tuple((ijk + m).T)] = True
    g = np.arange(-m, m + 1)
    I, J, L = np.meshgrid(g, g, g, indexing="ij")
    # nearest point of each cell to the centre, in units of spacing
    gap = np.sqrt(sum(np.maximum(np.abs(A) - 0.5, 0.0) ** 2 for A in (I, J, L)))
    return float(max(gap[~vis].min() - 0.5, 0.0) * spacing)


def three_return_derivative(model: ModelParams, x, t0: float, returns: Sequence[int], h: float = None) -> np.ndarray:
    """Central-difference derivative of ``f^n x`` in the parameters at three return steps.

    ``returns`` are the return iterates; the parameter varied for return
    ``R`` is the one used by step ``R`` (the fold into Q).
    """
    n = int(returns[2])
    h = 1e-6 * abs(t0) if h is None else h
    D = np.empty((3, 3))
    base = np.full(n, float(t0))
    for c, r in enumerate(returns[:3]):
        tp, tm = base.copy(), base.copy()
        tp[r - 1] += h
        tm[r - 1] -= h
        D[:, c] = (deterministic_orbit(model, x, tp)[-1] - deterministic_orbit(model, x, tm)[-1]) / (2 * h)
    return D


def inscribed_radius(D: np.ndarray, half_width: float) -> float:
    """Radius of the largest ball centred in the image of the cube ``[-w, w]^3`` under ``D``."""
    cols = D.T
    det = abs(np.linalg.det(D))
    return float(min(det / np.linalg.norm(np.cross(cols[a], cols[b])) for a, b in ((0, 1), (0, 2), (1, 2)))
                 * half_width)


def verify_ball(model: ModelParams, kernel: NoiseKernel, x, n_sequences: int = 10_000,
                grid_spacing: Optional[float] = None, seed: int = 0, screen_sequences: int = 256,
                screen_horizon: int = 200) -> BallReport:
    """Coverage of a ball around ``f_{t0}^n x`` after three returns.

    ``x`` must be regular: all screened sequences share their return
    iterates.  With ``n = R(3)``, ``n_sequences`` random orbits are pushed to
    step ``n`` and the visited cells of a lattice around the unperturbed
    image are recorded.  Without ``grid_spacing`` the search starts at
    ``K eps / 10`` with ``K`` from the linearization and keeps halving or
    doubling toward the spacing that certifies the largest radius.
    """
    rep = classify_recurrence(model, kernel, x, screen_sequences, screen_horizon, 0, seed)
    if not rep.return_times_sequence_independent or len(rep.common_returns) < 3:
        raise ScreenFailed(f"{tuple(x)} has sequence-dependent returns at epsilon = {kernel.epsilon:g}")
    returns = rep.common_returns[:3]
    n = returns[2]
    center = deterministic_orbit(model, x, np.full(n, kernel.t0))[-1]
    D = three_return_derivative(model, x, kernel.t0, returns)
    sv = np.linalg.svd(D, compute_uv=False)
    lin = inscribed_radius(D, kernel.epsilon)
    pts = endpoints(model, kernel, x, n, n_sequences, seed)
    if grid_spacing is not None:
        tried = (float(grid_spacing),)
        radii = (covered_radius(pts, center, grid_spacing),)
    else:
        s0 = max(lin, 1e-3 * kernel.epsilon)
        tried = tuple(s0 * 2.0 ** -k for k in range(-3, 5))
        radii = tuple(covered_radius(pts, center, s) for s in tried)
    best = int(np.argmax(radii))
    r = radii[best]
    return BallReport(center, r, r / kernel.epsilon, int(n_sequences), tried[best], tuple(returns), sv, lin,
                      tried, radii)
