"""Compiled per-point kernels shared by the public modules.

Model parameters, region boxes and the noise kernel travel as flat float
arrays (see ``ModelParams.packed`` and ``NoiseKernel.packed``) so that the
numba code stays free of Python objects.  Escaped states are NaN triples.
"""

import math

import numpy as np
from numba import njit

from ._rng import stream_key, uniform_from_key

# --- packed model layout -------------------------------------------------
SIGMA, LAM1, LAM2, FOLD_A = 0, 1, 2, 3
UA1, UA2, TB1, TB2 = 4, 5, 6, 7
LB1, LB2 = 8, 9
C11, C12, C21, C22 = 10, 11, 12, 13
Q01, Q02 = 14, 15
R_LO, R_HI = 16, 19
L_LO, L_HI = 22, 25
HO = 28  # h_z3, h_t2, h_xx, h_tz2, H_zz(2), H_zx1(2), H_tt(2)
N_PACKED = HO + 10

# --- packed region layout -------------------------------------------------
G_L, G_QP, G_Q, G_R, G_U = 0, 6, 12, 18, 24
G_ZETA = 30
N_GEOM = 31

# region labels, in precedence order
IN_R, IN_Q, IN_QPRIME_ONLY, IN_ANNULUS, IN_U_ONLY, IN_L_ONLY, OUTSIDE = range(7)

# noise layout: kind, lo, hi, bound, budget
K_KIND, K_LO, K_HI, K_BOUND, K_BUDGET = 0, 1, 2, 3, 4
ATTEMPT_STRIDE = 1 << 23


@njit(cache=True, inline="always")
def _in_box(P, off, z, x1, x2):
    return (P[off] <= z <= P[off + 3] and P[off + 1] <= x1 <= P[off + 4]
            and P[off + 2] <= x2 <= P[off + 5])


@njit(cache=True)
def step_point(P, z, x1, x2, t):
    """One application of f_t; returns NaNs when the state leaves L and R."""
    if (P[R_LO] <= z <= P[R_HI] and P[R_LO + 1] <= x1 <= P[R_HI + 1]
            and P[R_LO + 2] <= x2 <= P[R_HI + 2]):
        u = z - 1.0
        h = (P[HO] * u * u * u + P[HO + 1] * t * t
             + P[HO + 2] * (x1 * x1 + x2 * x2) + P[HO + 3] * t * u * u)
        H1 = P[HO + 4] * u * u + P[HO + 6] * u * x1 + P[HO + 8] * t * t
        H2 = P[HO + 5] * u * u + P[HO + 7] * u * x1 + P[HO + 9] * t * t
        nz = t + P[FOLD_A] * u * u + P[LB1] * x1 + P[LB2] * x2 + h
        n1 = P[Q01] + P[UA1] * t + P[TB1] * u + P[C11] * x1 + P[C12] * x2 + H1
        n2 = P[Q02] + P[UA2] * t + P[TB2] * u + P[C21] * x1 + P[C22] * x2 + H2
        return nz, n1, n2
    if (P[L_LO] <= z <= P[L_HI] and P[L_LO + 1] <= x1 <= P[L_HI + 1]
            and P[L_LO + 2] <= x2 <= P[L_HI + 2]):
        return P[SIGMA] * z, P[LAM1] * x1, P[LAM2] * x2
    return math.nan, math.nan, math.nan


@njit(cache=True)
def jacobian_point(P, z, x1, x2, t, J):
    """Fill ``J`` with the state derivative of f_t; False when escaped."""
    if (P[R_LO] <= z <= P[R_HI] and P[R_LO + 1] <= x1 <= P[R_HI + 1]
            and P[R_LO + 2] <= x2 <= P[R_HI + 2]):
        u = z - 1.0
        J[0, 0] = 2.0 * P[FOLD_A] * u + 3.0 * P[HO] * u * u + 2.0 * P[HO + 3] * t * u
        J[0, 1] = P[LB1] + 2.0 * P[HO + 2] * x1
        J[0, 2] = P[LB2] + 2.0 * P[HO + 2] * x2
        J[1, 0] = P[TB1] + 2.0 * P[HO + 4] * u + P[HO + 6] * x1
        J[1, 1] = P[C11] + P[HO + 6] * u
        J[1, 2] = P[C12]
        J[2, 0] = P[TB2] + 2.0 * P[HO + 5] * u + P[HO + 7] * x1
        J[2, 1] = P[C21] + P[HO + 7] * u
        J[2, 2] = P[C22]
        return True
    if (P[L_LO] <= z <= P[L_HI] and P[L_LO + 1] <= x1 <= P[L_HI + 1]
            and P[L_LO + 2] <= x2 <= P[L_HI + 2]):
        for i in range(3):
            for j in range(3):
                J[i, j] = 0.0
        J[0, 0] = P[SIGMA]
        J[1, 1] = P[LAM1]
        J[2, 2] = P[LAM2]
        return True
    return False


@njit(cache=True)
def classify_point(G, z, x1, x2):
    if not (z == z and x1 == x1 and x2 == x2):
        return OUTSIDE
    if _in_box(G, G_R, z, x1, x2):
        return IN_R
    if _in_box(G, G_Q, z, x1, x2):
        return IN_Q
    if _in_box(G, G_QP, z, x1, x2):
        return IN_QPRIME_ONLY
    # Euclidean distance to the R box
    d2 = 0.0
    v = (z, x1, x2)
    for k in range(3):
        lo = G[G_R + k]
        hi = G[G_R + 3 + k]
        if v[k] < lo:
            d2 += (lo - v[k]) ** 2
        elif v[k] > hi:
            d2 += (v[k] - hi) ** 2
    if d2 < G[G_ZETA] * G[G_ZETA]:
        return IN_ANNULUS
    if _in_box(G, G_U, z, x1, x2):
        return IN_U_ONLY
    if _in_box(G, G_L, z, x1, x2):
        return IN_L_ONLY
    return OUTSIDE


@njit(cache=True)
def in_Q(G, z, x1, x2):
    return _in_box(G, G_Q, z, x1, x2)


@njit(cache=True)
def in_U_or_Q(G, z, x1, x2):
    return _in_box(G, G_U, z, x1, x2) or _in_box(G, G_Q, z, x1, x2)


@njit(cache=True)
def density_at(kp, kb, kc, t):
    if kp[K_KIND] == 0.0:
        if kp[K_LO] <= t <= kp[K_HI]:
            return 1.0 / (kp[K_HI] - kp[K_LO])
        return 0.0
    n = kb.shape[0] - 1
    if t < kb[0] or t > kb[n]:
        return 0.0
    i = 0
    while i < n - 1 and t > kb[i + 1]:
        i += 1
    s = t - kb[i]
    acc = 0.0
    for j in range(kc.shape[1] - 1, -1, -1):
        acc = acc * s + kc[i, j]
    return acc


@njit(cache=True)
def draw_t(kp, kb, kc, key, k):
    """Draw number ``k`` of a stream; NaN when the rejection budget runs out."""
    lo = kp[K_LO]
    hi = kp[K_HI]
    base = k * ATTEMPT_STRIDE
    if kp[K_KIND] == 0.0:
        return lo + (hi - lo) * uniform_from_key(key, base)
    budget = int(kp[K_BUDGET])
    for att in range(budget):
        t = lo + (hi - lo) * uniform_from_key(key, base + 2 * att)
        if uniform_from_key(key, base + 2 * att + 1) * kp[K_BOUND] <= density_at(kp, kb, kc, t):
            return t
    return math.nan


@njit(cache=True)
def draw_sequence(kp, kb, kc, seed, stream, start, n):
    key = stream_key(seed, stream)
    out = np.empty(n)
    for k in range(n):
        out[k] = draw_t(kp, kb, kc, key, start + k)
    return out


@njit(cache=True)
def run_orbit(P, G, kp, kb, kc, seed, stream, x0, n):
    """Record one orbit; returns points, labels, parameters used and escape index."""
    pts = np.empty((n + 1, 3))
    labels = np.empty(n + 1, np.int8)
    ts = np.empty(n)
    key = stream_key(seed, stream)
    z, x1, x2 = x0[0], x0[1], x0[2]
    pts[0, 0], pts[0, 1], pts[0, 2] = z, x1, x2
    labels[0] = classify_point(G, z, x1, x2)
    for k in range(n):
        t = draw_t(kp, kb, kc, key, k)
        ts[k] = t
        nz, n1, n2 = step_point(P, z, x1, x2, t)
        if nz != nz:
            return pts[:k + 1], labels[:k + 1], ts[:k + 1], k
        z, x1, x2 = nz, n1, n2
        pts[k + 1, 0], pts[k + 1, 1], pts[k + 1, 2] = z, x1, x2
        labels[k + 1] = classify_point(G, z, x1, x2)
    return pts, labels, ts, -1


@njit(cache=True, inline="always")
def cell_index(glo, gh, res, z, x1, x2):
    """Flat index of the grid cell holding the state, -1 off the grid."""
    if not (z == z and x1 == x1 and x2 == x2):
        return -1
    i = int(math.floor((z - glo[0]) / gh[0]))
    j = int(math.floor((x1 - glo[1]) / gh[1]))
    k = int(math.floor((x2 - glo[2]) / gh[2]))
    # the upper faces belong to the last cell
    if i == res[0] and z == glo[0] + res[0] * gh[0]:
        i -= 1
    if j == res[1] and x1 == glo[1] + res[1] * gh[1]:
        j -= 1
    if k == res[2] and x2 == glo[2] + res[2] * gh[2]:
        k -= 1
    if i < 0 or j < 0 or k < 0 or i >= res[0] or j >= res[1] or k >= res[2]:
        return -1
    return (i * res[1] + j) * res[2] + k
