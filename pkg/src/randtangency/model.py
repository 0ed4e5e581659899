"""Piecewise model of a randomly unfolded homoclinic tangency in 3D.

The state lives in linearizing coordinates ``(z, x1, x2)`` around the saddle
``p = (0, 0, 0)``: ``z`` is the expanding direction, ``x1`` the weak-stable
and ``x2`` the strong-stable one.  Inside the box ``L`` the map is the linear
saddle ``(z, x1, x2) -> (sigma z, lambda1 x1, lambda2 x2)``; inside the box
``R`` around ``r = (1, 0, 0)`` it is the quadratic fold that sends ``R`` back
near the tangency point ``q = (0, 1, 1)``.  Everything else escapes.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K


class EscapedError(ValueError):
    """The orbit left the modelled region ``L`` before the requested step."""


class RegionLabel(enum.IntEnum):
    """Region of a state, listed in classification precedence."""

    IN_R = K.IN_R
    IN_Q = K.IN_Q
    IN_QPRIME_ONLY = K.IN_QPRIME_ONLY
    IN_ANNULUS = K.IN_ANNULUS
    IN_U_ONLY = K.IN_U_ONLY
    IN_L_ONLY = K.IN_L_ONLY
    OUTSIDE = K.OUTSIDE

    @property
    def tag(self) -> str:
        return _TAGS[self]


_TAGS = {
    RegionLabel.IN_R: "InR",
    RegionLabel.IN_Q: "InQ",
    RegionLabel.IN_QPRIME_ONLY: "InQprimeOnly",
    RegionLabel.IN_ANNULUS: "InAnnulus",
    RegionLabel.IN_U_ONLY: "InUOnly",
    RegionLabel.IN_L_ONLY: "InLOnly",
    RegionLabel.OUTSIDE: "Outside",
}


class Point(NamedTuple):
    z: float
    x1: float
    x2: float


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo, hi]`` in linearized coordinates."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise ValueError("boxes are three dimensional")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"empty box {self.lo} .. {self.hi}")

    @classmethod
    def around(cls, center, half_widths) -> "Box":
        c = np.asarray(center, float)
        w = np.asarray(half_widths, float)
        return cls(tuple(c - w), tuple(c + w))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi))

    def intersects(self, other: "Box") -> bool:
        return all(max(a0, b0) <= min(a1, b1)
                   for a0, a1, b0, b1 in zip(self.lo, self.hi, other.lo, other.hi))

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        below = np.maximum(np.asarray(self.lo) - x, 0.0)
        above = np.maximum(x - np.asarray(self.hi), 0.0)
        return np.sqrt(np.sum((below + above) ** 2, axis=-1))

    def expanded(self, margin: float) -> "Box":
        return Box(tuple(v - margin for v in self.lo), tuple(v + margin for v in self.hi))

    def scaled(self, factor: float, about=None) -> "Box":
        c = self.center if about is None else np.asarray(about, float)
        lo = c + factor * (np.asarray(self.lo) - c)
        hi = c + factor * (np.asarray(self.hi) - c)
        return Box(tuple(lo), tuple(hi))

    def hull(self, other: "Box") -> "Box":
        return Box(tuple(np.minimum(self.lo, other.lo)), tuple(np.maximum(self.hi, other.hi)))

    def as_list(self) -> list:
        return [list(self.lo), list(self.hi)]


P_SADDLE = (0.0, 0.0, 0.0)
Q_TANGENCY = (0.0, 1.0, 1.0)
R_PREIMAGE = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class RegionGeometry:
    L_box: Box
    Qprime_box: Box
    Q_box: Box
    R_box: Box
    U_box: Box
    zeta: float

    @classmethod
    def default(cls) -> "RegionGeometry":
        return cls(
            L_box=Box((-2.2, -2.2, -2.2), (2.2, 2.2, 2.2)),
            Qprime_box=Box.around(Q_TANGENCY, (0.15, 0.3, 0.3)),
            Q_box=Box.around(Q_TANGENCY, (0.1, 0.2, 0.2)),
            R_box=Box((0.65, -0.15, -0.15), (1.35, 0.15, 0.15)),
            U_box=Box((-0.2, -0.35, -0.35), (1.4, 0.6, 0.4)),
            zeta=0.03,
        )

    def packed(self) -> np.ndarray:
        g = np.empty(K.N_GEOM)
        for off, box in ((K.G_L, self.L_box), (K.G_QP, self.Qprime_box), (K.G_Q, self.Q_box),
                         (K.G_R, self.R_box), (K.G_U, self.U_box)):
            g[off:off + 3] = box.lo
            g[off + 3:off + 6] = box.hi
        g[K.G_ZETA] = self.zeta
        return g

    def annulus_hull(self) -> Box:
        return self.R_box.expanded(self.zeta)


@dataclass(frozen=True)
class HigherOrder:
    """Optional nonlinear corrections to the fold.

    ``h = h_z3 u^3 + h_t2 t^2 + h_xx |X|^2 + h_tz2 t u^2`` and, per component,
    ``H_i = H_zz[i] u^2 + H_zx1[i] u x1 + H_tt[i] t^2`` with ``u = z - 1``.
    Every monomial is at least quadratic and ``h`` has no ``t u`` term, so the
    first derivatives of ``h`` and ``H`` and the mixed ``t u`` derivative of
    ``h`` vanish at the tangency whatever the coefficients.
    """

    h_z3: float = 0.0
    h_t2: float = 0.0
    h_xx: float = 0.0
    h_tz2: float = 0.0
    H_zz: tuple = (0.0, 0.0)
    H_zx1: tuple = (0.0, 0.0)
    H_tt: tuple = (0.0, 0.0)

    def packed(self) -> np.ndarray:
        return np.array([self.h_z3, self.h_t2, self.h_xx, self.h_tz2, *self.H_zz,
                         *self.H_zx1, *self.H_tt], float)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.packed())

    def h(self, t, u, X):
        return (self.h_z3 * u ** 3 + self.h_t2 * t ** 2 + self.h_xx * (X[0] ** 2 + X[1] ** 2)
                + self.h_tz2 * t * u ** 2)

    def H(self, t, u, X):
        return np.array([self.H_zz[i] * u ** 2 + self.H_zx1[i] * u * X[0] + self.H_tt[i] * t ** 2
                         for i in range(2)])

    def gradients_at_origin(self):
        """(Dh, DH, d2h/dt du) at (t, u, X) = 0, computed from the monomials."""
        Dh = np.zeros(4)  # d/dt, d/du, d/dx1, d/dx2 of every monomial vanish at 0
        DH = np.zeros((2, 4))
        d2h_tu = 2.0 * self.h_tz2 * 0.0
        return Dh, DH, d2h_tu


@dataclass(frozen=True)
class ModelParams:
    sigma: float = 2.0
    lambda1: float = 0.45
    lambda2: float = 0.3
    a: float = -0.08
    A: tuple = (0.08, 0.05)
    B: tuple = (0.6, 0.5)
    b: tuple = (0.1, 0.1)
    C: tuple = ((0.5, 0.2), (-0.6, 0.2))
    q0: tuple = (1.0, 1.0)
    higher_order: HigherOrder = field(default_factory=HigherOrder)
    t_star: float = 0.1
    regions: RegionGeometry = field(default_factory=RegionGeometry.default)

    def __post_init__(self):
        for name in ("A", "B", "b", "q0"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise ValueError(f"{name} must have two components")
            object.__setattr__(self, name, v)
        C = tuple(tuple(float(x) for x in row) for row in self.C)
        if len(C) != 2 or any(len(r) != 2 for r in C):
            raise ValueError("C must be 2x2")
        object.__setattr__(self, "C", C)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def with_regions(self, **changes) -> "ModelParams":
        return self.replace(regions=dataclasses.replace(self.regions, **changes))

    def packed(self) -> np.ndarray:
        P = np.zeros(K.N_PACKED)
        P[K.SIGMA], P[K.LAM1], P[K.LAM2], P[K.FOLD_A] = self.sigma, self.lambda1, self.lambda2, self.a
        P[K.UA1], P[K.UA2] = self.A
        P[K.TB1], P[K.TB2] = self.B
        P[K.LB1], P[K.LB2] = self.b
        (P[K.C11], P[K.C12]), (P[K.C21], P[K.C22]) = self.C
        P[K.Q01], P[K.Q02] = self.q0
        P[K.R_LO:K.R_LO + 3] = self.regions.R_box.lo
        P[K.R_HI:K.R_HI + 3] = self.regions.R_box.hi
        P[K.L_LO:K.L_LO + 3] = self.regions.L_box.lo
        P[K.L_HI:K.L_HI + 3] = self.regions.L_box.hi
        P[K.HO:K.HO + 10] = self.higher_order.packed()
        return P

    @property
    def B_norm(self) -> float:
        """Max-norm of the unstable tangent direction at q."""
        return max(abs(self.B[0]), abs(self.B[1]))

    @property
    def cone_rate(self) -> float:
        """Slope gain per linear step for cone vectors, 1 / max |sigma lambda_i|."""
        return 1.0 / max(abs(self.sigma * self.lambda1), abs(self.sigma * self.lambda2))


# --- validation -----------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"ok": self.ok,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                           for c in self.checks]}

    def __str__(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.checks]
        return "\n".join(lines)


def validate_params(p: ModelParams) -> ValidationReport:
    """Check the saddle, tangency and region conditions one inequality at a time."""
    s, l1, l2 = p.sigma, p.lambda1, p.lambda2
    checks = [
        Check("expanding_eigenvalue", s > 1, f"sigma = {s:g} must exceed 1"),
        Check("weak_contraction", 0 < abs(l1) < 1, f"0 < |lambda1| = {abs(l1):g} < 1"),
        Check("sectional_dissipativity_lambda1", abs(s * l1) < 1,
              f"|sigma*lambda1| = {abs(s * l1):g} must be < 1"),
        Check("sectional_dissipativity_lambda2", abs(s * l2) < 1,
              f"|sigma*lambda2| = {abs(s * l2):g} must be < 1"),
        Check("least_contracting_eigenvalue", 0 < abs(l2) < abs(l1),
              f"need 0 < |lambda2| = {abs(l2):g} < |lambda1| = {abs(l1):g}"),
        Check("quadratic_tangency", p.a != 0, f"fold curvature a = {p.a:g} must be nonzero"),
        Check("transverse_to_weak_direction", p.B[1] != 0 and p.B[0] != 0,
              f"B = {p.B} must have both components nonzero"),
        Check("generic_unfolding", p.B[1] != 0,
              f"det(A, B, D) = -B2 = {-p.B[1]:g} must be nonzero"),
        Check("fold_functional_nonzero", any(v != 0 for v in p.b), f"b = {p.b} must be nonzero"),
    ]
    Dh, DH, d2h = p.higher_order.gradients_at_origin()
    ho_ok = not np.any(Dh) and not np.any(DH) and d2h == 0.0
    checks.append(Check("higher_order_flat_at_tangency", ho_ok,
                        "h, H and the mixed t-z derivative of h vanish at the tangency"))
    checks.append(Check("unfolding_window", p.t_star > 0, f"t_star = {p.t_star:g} must be > 0"))
    checks.extend(_region_checks(p))
    return ValidationReport(tuple(checks))


def _region_checks(p: ModelParams) -> list:
    g = p.regions
    ann = g.annulus_hull()
    core = Box((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))
    return [
        Check("L_contains_core_box", g.L_box.contains_box(core), "L must contain [-2, 2]^3"),
        Check("Q_inside_Qprime", g.Qprime_box.contains_box(g.Q_box), "Q must lie inside Q'"),
        Check("R_inside_U", g.U_box.contains_box(g.R_box), "R must lie inside U"),
        Check("U_disjoint_from_Q", not g.U_box.intersects(g.Q_box), "U and Q must be disjoint"),
        Check("annulus_inside_U", g.zeta > 0 and g.U_box.contains_box(ann),
              f"zeta = {g.zeta:g} neighbourhood of R must lie inside U"),
        Check("regions_inside_L", all(g.L_box.contains_box(b) for b in (g.Qprime_box, g.U_box, ann)),
              "Q', U and the annulus must lie inside L"),
        Check("saddle_in_L", bool(g.L_box.contains(P_SADDLE)), "p = (0,0,0) must lie in L"),
        Check("tangency_in_Q", bool(g.Q_box.contains(Q_TANGENCY)), "q = (0,1,1) must lie in Q"),
        Check("preimage_in_R", bool(g.R_box.contains(R_PREIMAGE)), "r = (1,0,0) must lie in R"),
    ]


# --- pointwise dynamics ---------------------------------------------------

def classify(p: ModelParams, x) -> RegionLabel:
    z, x1, x2 = (float(v) for v in x)
    return RegionLabel(K.classify_point(p.regions.packed(), z, x1, x2))


def classify_many(p: ModelParams, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, float))
    return _classify_many(p.regions.packed(), pts)


def step(p: ModelParams, x, t: float) -> Optional[Point]:
    """Apply f_t once; ``None`` means the orbit escaped the modelled region."""
    z, x1, x2 = K.step_point(p.packed(), float(x[0]), float(x[1]), float(x[2]), float(t))
    if math.isnan(z):
        return None
    return Point(z, x1, x2)


def step_many(p: ModelParams, pts, ts) -> np.ndarray:
    """Vectorised :func:`step`; escaped rows come back as NaN."""
    pts = np.atleast_2d(np.asarray(pts, float))
    ts = np.broadcast_to(np.asarray(ts, float), (pts.shape[0],)).copy()
    return _step_many(p.packed(), pts, ts)


def jacobian(p: ModelParams, x, t: float) -> np.ndarray:
    J = np.empty((3, 3))
    if not K.jacobian_point(p.packed(), float(x[0]), float(x[1]), float(x[2]), float(t), J):
        raise EscapedError(f"no derivative: {tuple(x)} is outside L and R")
    return J


def parameter_derivative(p: ModelParams, x, t: float) -> np.ndarray:
    """Derivative of f_t(x) in t; zero in the linear region, (1 + h_t, A + H_t) on R."""
    x = np.asarray(x, float)
    if p.regions.R_box.contains(x):
        ho = p.higher_order
        u = x[0] - 1.0
        return np.array([1.0 + 2 * ho.h_t2 * t + ho.h_tz2 * u * u,
                         p.A[0] + 2 * ho.H_tt[0] * t,
                         p.A[1] + 2 * ho.H_tt[1] * t])
    if p.regions.L_box.contains(x):
        return np.zeros(3)
    raise EscapedError(f"no derivative: {tuple(x)} is outside L and R")


# --- tangent vector helpers -----------------------------------------------

def _nonzero(v) -> np.ndarray:
    v = np.asarray(v, float)
    if not np.any(v):
        raise ValueError("undefined for the zero vector")
    return v


def slope(v) -> float:
    """``|u0| / max(|u1|, |u2|)``, ``inf`` for purely vertical vectors."""
    v = _nonzero(v)
    den = max(abs(v[1]), abs(v[2]))
    return math.inf if den == 0 else abs(v[0]) / den


def norm_max(v) -> float:
    return float(np.max(np.abs(np.asarray(v, float))))


def angle_to(v, w) -> float:
    v = _nonzero(v)
    w = _nonzero(w)
    c = float(np.dot(v, w) / (np.linalg.norm(v) * np.linalg.norm(w)))
    return math.acos(min(1.0, max(-1.0, c)))


def line_angle(v, w) -> float:
    """Angle between the lines spanned by ``v`` and ``w``, in [0, pi/2]."""
    ang = angle_to(v, w)
    return min(ang, math.pi - ang)


def slopes(V) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, float))
    den = np.max(np.abs(V[:, 1:]), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den == 0, np.inf, np.abs(V[:, 0]) / den)


from numba import njit  # noqa: E402


@njit(cache=True)
def _step_many(P, pts, ts):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        out[i, 0], out[i, 1], out[i, 2] = K.step_point(P, pts[i, 0], pts[i, 1], pts[i, 2], ts[i])
    return out


@njit(cache=True)
def _classify_many(G, pts):
    out = np.empty(pts.shape[0], np.int8)
    for i in range(pts.shape[0]):
        out[i] = K.classify_point(G, pts[i, 0], pts[i, 1], pts[i, 2])
    return out
