"""Stationary measures: Cesàro histograms, Ulam operators and their classes.

Two independent estimates of the stationary measures are provided.  The
first averages occupation histograms along random orbits.  The second
discretizes the annealed transfer operator on a box grid (Ulam's method),
splits the resulting Markov chain into closed communicating classes and
solves for one stationary vector per class.

The grid carries one extra absorbing cell standing for everything off the
grid, so the operator stays stochastic while orbits that leave are
conditioned away.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit, prange
from scipy.optimize import minimize
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from . import _kernels as K
from ._rng import TAG_NOISE, TAG_ULAM_POS, TAG_ULAM_T, stream_key, uniform_from_key
from .model import ModelParams
from .noise import NoiseKernel, RejectionBudgetExceeded
from .orbits import Observable, birkhoff_vectors, observable_family


class ConvergenceError(RuntimeError):
    """Stationary solve did not reach the requested residual."""


# --- grid and histograms ----------------------------------------------------

@dataclass(frozen=True)
class Grid3:
    """Uniform box grid; flat index ``(i*n1 + j)*n2 + k``, plus one outside cell."""

    lo: tuple
    hi: tuple
    res: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "res", tuple(int(v) for v in self.res))
        if any(r < 1 for r in self.res) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("grid needs positive resolution and extent")

    @classmethod
    def covering(cls, model: ModelParams, res) -> "Grid3":
        """Bounding box of U and Q at resolution ``res`` (int or triple)."""
        if np.isscalar(res):
            res = (res, res, res)
        box = model.regions.U_box.hull(model.regions.Q_box)
        return cls(box.lo, box.hi, tuple(res))

    def refined(self, factor: int = 2) -> "Grid3":
        return Grid3(self.lo, self.hi, tuple(factor * r for r in self.res))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.res))

    @property
    def outside(self) -> int:
        """Index of the absorbing outside cell."""
        return self.n_cells

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / np.asarray(self.res)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def unravel(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.res), axis=-1)

    def centers(self, idx=None) -> np.ndarray:
        if idx is None:
            idx = np.arange(self.n_cells)
        ijk = self.unravel(idx)
        return np.asarray(self.lo) + (ijk + 0.5) * self.spacing

    def index_of(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        return _index_many(np.asarray(self.lo), self.spacing, np.asarray(self.res, np.int64), pts)

    def cells_in_box(self, box) -> np.ndarray:
        """Flat indices of cells whose centres lie in ``box``."""
        c = self.centers()
        return np.flatnonzero(box.contains(c))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "res": list(self.res)}


@njit(cache=True)
def _index_many(lo, h, res, pts):
    out = np.empty(pts.shape[0], np.int64)
    for i in range(pts.shape[0]):
        out[i] = K.cell_index(lo, h, res, pts[i, 0], pts[i, 1], pts[i, 2])
    return out


@dataclass(frozen=True)
class Histogram:
    grid: Grid3
    masses: np.ndarray
    escaped_mass: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.masses, float)
        if m.shape != (self.grid.n_cells,) or np.any(m < 0):
            raise ValueError("masses must be one nonnegative value per cell")
        object.__setattr__(self, "masses", m)

    @property
    def total(self) -> float:
        return float(self.masses.sum() + self.escaped_mass)

    @classmethod
    def point_mass(cls, grid: Grid3, x) -> "Histogram":
        m = np.zeros(grid.n_cells)
        i = int(grid.index_of(x)[0])
        if i < 0:
            return cls(grid, m, 1.0)
        m[i] = 1.0
        return cls(grid, m, 0.0)

    @classmethod
    def from_density(cls, grid: Grid3, cells, weights) -> "Histogram":
        m = np.zeros(grid.n_cells)
        m[np.asarray(cells)] = weights
        return cls(grid, m / m.sum(), 0.0)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.masses > 0)

    def normalized(self) -> np.ndarray:
        s = self.masses.sum()
        return self.masses / s if s > 0 else self.masses


def total_variation(m1, m2) -> float:
    return 0.5 * float(np.abs(np.asarray(m1) - np.asarray(m2)).sum())


@njit(cache=True, parallel=True)
def _occupations(P, kp, kb, kc, seed, x0, s0, n_seq, n, glo, gh, res):
    out = np.full((n_seq, n), -1, np.int32)
    nan_t = np.zeros(n_seq, np.bool_)
    for r in prange(n_seq):
        key = stream_key(seed, np.uint64(TAG_NOISE + s0 + r))
        z, x1, x2 = x0[0], x0[1], x0[2]
        for j in range(n):
            out[r, j] = K.cell_index(glo, gh, res, z, x1, x2)
            t = K.draw_t(kp, kb, kc, key, j)
            if t != t:
                nan_t[r] = True
                break
            z, x1, x2 = K.step_point(P, z, x1, x2, t)
            if z != z:
                break
    return out, nan_t


def cesaro_measure(model: ModelParams, kernel: NoiseKernel, x, n: int, n_sequences: int,
                   grid: Grid3, seed: int) -> Histogram:
    """Average cell occupation of ``f_t^j x`` over ``j < n`` and sampled sequences.

    Terms that fall off the grid, including every term after an escape, are
    collected in ``escaped_mass``.
    """
    if n < 1 or n_sequences < 1:
        raise ValueError("need n >= 1 and n_sequences >= 1")
    kp, kb, kc = kernel.packed
    P = model.packed()
    counts = np.zeros(grid.n_cells + 1, np.int64)
    block = max(1, min(n_sequences, 20_000_000 // n))
    glo, gh, res = np.asarray(grid.lo), grid.spacing, np.asarray(grid.res, np.int64)
    for s0 in range(0, n_sequences, block):
        m = min(block, n_sequences - s0)
        occ, bad = _occupations(P, kp, kb, kc, np.uint64(seed), np.asarray(x, float), s0, m, n,
                                glo, gh, res)
        if bad.any():
            raise RejectionBudgetExceeded("rejection sampling exhausted its attempt budget")
        occ = occ.ravel().astype(np.int64)
        occ[occ < 0] = grid.n_cells
        counts += np.bincount(occ, minlength=grid.n_cells + 1)
    total = float(n) * n_sequences
    return Histogram(grid, counts[:-1] / total, counts[-1] / total)


# --- Ulam operator ----------------------------------------------------------

@njit(cache=True, parallel=True)
def _ulam_rows(P, kp, kb, kc, seed, glo, gh, res, S):
    n = res[0] * res[1] * res[2]
    dest = np.empty((n, S), np.int32)
    cnt = np.zeros((n, S), np.uint16)
    nu = np.zeros(n, np.int32)
    nan_t = np.zeros(n, np.bool_)
    for c in prange(n):
        i = c // (res[1] * res[2])
        j = (c // res[2]) % res[1]
        k = c % res[2]
        kpos = stream_key(seed, np.uint64(TAG_ULAM_POS + c))
        kt = stream_key(seed, np.uint64(TAG_ULAM_T + c))
        row = np.empty(S, np.int32)
        for s in range(S):
            z = glo[0] + (i + uniform_from_key(kpos, 3 * s)) * gh[0]
            x1 = glo[1] + (j + uniform_from_key(kpos, 3 * s + 1)) * gh[1]
            x2 = glo[2] + (k + uniform_from_key(kpos, 3 * s + 2)) * gh[2]
            t = K.draw_t(kp, kb, kc, kt, s)
            if t != t:
                nan_t[c] = True
            nz, n1, n2 = K.step_point(P, z, x1, x2, t)
            d = K.cell_index(glo, gh, res, nz, n1, n2)
            row[s] = n if d < 0 else d
        row.sort()
        m = 0
        for s in range(S):
            if m > 0 and dest[c, m - 1] == row[s]:
                cnt[c, m - 1] += 1
            else:
                dest[c, m] = row[s]
                cnt[c, m] = 1
                m += 1
        nu[c] = m
    return dest, cnt, nu, nan_t


@njit(cache=True)
def _compact(dest, cnt, nu, indptr, S):
    nnz = indptr[-1]
    idx = np.empty(nnz, np.int32)
    val = np.empty(nnz)
    for c in range(dest.shape[0]):
        o = indptr[c]
        for m in range(nu[c]):
            idx[o + m] = dest[c, m]
            val[o + m] = cnt[c, m] / S
    return idx, val


@dataclass(frozen=True)
class UlamOperator:
    """Row-stochastic transition matrix on grid cells plus the outside cell."""

    grid: Grid3
    transitions: sp.csr_matrix
    samples_per_cell: int

    @property
    def interior(self) -> sp.csr_matrix:
        n = self.grid.n_cells
        return self.transitions[:n, :n].tocsr()

    def row_sum_error(self) -> float:
        s = np.asarray(self.transitions.sum(axis=1)).ravel()
        return float(np.max(np.abs(s - 1.0)))

    def coo_text(self) -> str:
        """One ``row col prob`` line per stored transition, rows in order."""
        T = self.transitions
        lines = []
        for r in range(T.shape[0]):
            for o in range(T.indptr[r], T.indptr[r + 1]):
                lines.append(f"{r} {int(T.indices[o])} {float(T.data[o])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coo_text(cls, text: str, grid: Grid3, samples_per_cell: int) -> "UlamOperator":
        arr = np.loadtxt(io.StringIO(text), ndmin=2)
        n = grid.n_cells + 1
        T = sp.csr_matrix((arr[:, 2], (arr[:, 0].astype(int), arr[:, 1].astype(int))), shape=(n, n))
        return cls(grid, T, samples_per_cell)


def build_ulam(model: ModelParams, kernel: NoiseKernel, grid: Grid3, samples_per_cell: int,
               seed: int) -> UlamOperator:
    """Monte Carlo Ulam matrix of the annealed transfer operator.

    Each cell gets ``samples_per_cell`` points drawn uniformly in the cell,
    each paired with an independent parameter draw; sample ``s`` of cell ``c``
    depends only on ``(seed, c, s)``.
    """
    S = int(samples_per_cell)
    if S < 1 or S > 65535:
        raise ValueError("samples_per_cell must be in 1 .. 65535")
    kp, kb, kc = kernel.packed
    res = np.asarray(grid.res, np.int64)
    dest, cnt, nu, bad = _ulam_rows(model.packed(), kp, kb, kc, np.uint64(seed),
                                    np.asarray(grid.lo), grid.spacing, res, S)
    if bad.any():
        raise RejectionBudgetExceeded("rejection sampling exhausted its attempt budget")
    n = grid.n_cells
    indptr = np.zeros(n + 2, np.int64)
    indptr[1:n + 1] = np.cumsum(nu)
    indptr[n + 1] = indptr[n] + 1
    idx, val = _compact(dest, cnt, nu, indptr[:n + 1], S)
    del dest, cnt
    idx = np.append(idx, np.int32(n))
    val = np.append(val, 1.0)
    T = sp.csr_matrix((val, idx, indptr), shape=(n + 1, n + 1))
    return UlamOperator(grid, T, S)


def operator_from_matrix(P, grid: Optional[Grid3] = None) -> UlamOperator:
    """Wrap a dense or sparse interior chain (rows may leak to the outside cell)."""
    P = sp.csr_matrix(P, dtype=float)
    n = P.shape[0]
    if grid is None:
        grid = Grid3((0.0, 0.0, 0.0), (float(n), 1.0, 1.0), (n, 1, 1))
    leak = 1.0 - np.asarray(P.sum(axis=1)).ravel()
    T = sp.bmat([[P, sp.csr_matrix(leak[:, None])], [None, sp.csr_matrix([[1.0]])]]).tocsr()
    return UlamOperator(grid, T, 0)


# --- stationary components --------------------------------------------------

@dataclass(frozen=True)
class Component:
    cells: np.ndarray
    density: np.ndarray
    intersects_Q: bool
    residual: float
    leak: float

    @property
    def size(self) -> int:
        return len(self.cells)

    def full(self, n_cells: int) -> np.ndarray:
        out = np.zeros(n_cells)
        out[self.cells] = self.density
        return out

    def histogram(self, grid: Grid3) -> Histogram:
        return Histogram(grid, self.full(grid.n_cells), 0.0)


@dataclass(frozen=True)
class PhysicalMeasureSet:
    grid: Grid3
    components: tuple

    @property
    def physical(self) -> list:
        """Components whose support meets Q."""
        return [c for c in self.components if c.intersects_Q]

    @property
    def count_l(self) -> int:
        return len(self.physical)


def closed_classes(A: sp.csr_matrix) -> list:
    """Closed communicating classes of the positive-transition graph.

    Transitions to the outside cell are ignored.  A class qualifies when it
    carries a cycle (more than one cell, or a self loop) and no other such
    class is reachable from it; cells that only lead off the grid are
    transient and never block a class from qualifying.
    """
    A = sp.csr_matrix(A)
    A.eliminate_zeros()
    n_scc, lab = csgraph.connected_components(A, directed=True, connection="strong")
    sizes = np.bincount(lab, minlength=n_scc)
    loops = np.zeros(n_scc, bool)
    diag = A.diagonal() > 0
    loops[lab[diag]] = True
    cyclic = (sizes > 1) | loops
    coo = A.tocoo()
    a, b = lab[coo.row], lab[coo.col]
    keep = a != b
    # reversed condensation: edge from each class to its predecessors
    Crev = sp.csr_matrix((np.ones(keep.sum()), (b[keep], a[keep])), shape=(n_scc, n_scc))
    # classes with an edge into a cyclic class can reach one
    start = np.unique(a[keep][cyclic[b[keep]]])
    reach = np.zeros(n_scc, bool)
    if len(start):
        ext = sp.bmat([[Crev, None], [sp.csr_matrix((np.ones(len(start)), (np.zeros(len(start), int), start)),
                                                    shape=(1, n_scc)), sp.csr_matrix((1, 1))]]).tocsr()
        order = csgraph.breadth_first_order(ext, n_scc, directed=True, return_predecessors=False)
        reach[order[order < n_scc]] = True
    terminal = np.flatnonzero(cyclic & ~reach)
    classes = [np.flatnonzero(lab == c) for c in terminal]
    classes.sort(key=lambda c: int(c[0]))
    return classes


def stationary_vector(S: sp.csr_matrix, tol: float = 1e-10, max_iter: int = 100_000) -> tuple:
    """Stationary row vector of an irreducible stochastic matrix and its residual.

    A direct sparse solve gives the vector; lazy power iteration
    ``pi <- (pi + pi S) / 2`` then polishes it if the residual
    ``||pi S - pi||_1`` is still above ``tol``.  The lazy step removes any
    periodicity, so the polish converges for every closed class.
    """
    n = S.shape[0]
    if n == 1:
        return np.ones(1), float(abs(S[0, 0] - 1.0))
    M = (S.T - sp.identity(n, format="csr")).tolil()
    M[0, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = np.asarray(spsolve(M.tocsc(), rhs)).ravel()
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    ST = S.T.tocsr()
    res = float(np.abs(ST @ pi - pi).sum())
    it = 0
    while res > tol and it < max_iter:
        pi = 0.5 * (pi + ST @ pi)
        pi /= pi.sum()
        res = float(np.abs(ST @ pi - pi).sum())
        it += 1
    if res > tol:
        raise ConvergenceError(f"stationary residual {res:.3g} after {it} lazy iterations")
    return pi, res


def stationary_components(P: UlamOperator, tol: float = 1e-10, q_box=None) -> PhysicalMeasureSet:
    """Enumerate closed classes and their stationary densities.

    Each class is solved for the chain conditioned to stay on the grid (rows
    renormalized inside the class); ``leak`` is the per-step probability of
    leaving the grid under that density.  ``q_box`` decides the Q flag; a
    cell counts when its centre is in Q and it carries mass.
    """
    A = P.interior
    comps = []
    centers = None
    for cells in closed_classes(A):
        S = A[cells][:, cells].tocsr()
        rows = np.asarray(S.sum(axis=1)).ravel()
        S = sp.diags(1.0 / rows) @ S
        pi, res = stationary_vector(S.tocsr(), tol)
        leak = float(np.dot(pi, 1.0 - rows))
        hitQ = False
        if q_box is not None:
            centers = P.grid.centers(cells)
            hitQ = bool(np.any(q_box.contains(centers) & (pi > 0)))
        comps.append(Component(cells, pi, hitQ, res, leak))
    return PhysicalMeasureSet(P.grid, tuple(comps))


def components_for(model: ModelParams, kernel: NoiseKernel, res, samples_per_cell: int = 64,
                   seed: int = 0) -> PhysicalMeasureSet:
    grid = Grid3.covering(model, res)
    P = build_ulam(model, kernel, grid, samples_per_cell, seed)
    return stationary_components(P, q_box=model.regions.Q_box)


# --- diagnostics --------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    per_observable: dict
    escaped_weight: float

    @property
    def value(self) -> float:
        return max(self.per_observable.values())


def stationarity_residual(mu: Histogram, model: ModelParams, kernel: NoiseKernel,
                          observables: Optional[Sequence[Observable]] = None,
                          n_quadrature: int = 8) -> ResidualReport:
    """Defect of the stationarity identity for ``mu`` over a family of observables.

    Both sides use the cell-centre rule in space and Gauss-Legendre nodes
    for the kernel.  Observables are evaluated through their cell averages
    at the grid's cell size, so the smoothed indicator of Q is used.
    Escaped images contribute zero; their weight is reported.
    """
    if observables is None:
        observables = observable_family(model)
    m = mu.normalized()
    cells = np.flatnonzero(m > 0)
    w = m[cells]
    X = mu.grid.centers(cells)
    hw = 0.5 * mu.grid.spacing
    nodes, weights = kernel.quadrature(n_quadrature)
    P = model.packed()
    images = [_step_all(P, X, float(t)) for t in nodes]
    out = {}
    esc = 0.0
    for q, img in enumerate(images):
        bad = np.isnan(img[:, 0])
        esc += weights[q] * float(w[bad].sum())
    for obs in observables:
        lhs = float(np.dot(w, obs.averaged(X, hw)))
        rhs = 0.0
        for q, img in enumerate(images):
            ok = ~np.isnan(img[:, 0])
            rhs += weights[q] * float(np.dot(w[ok], obs.averaged(img[ok], hw)))
        out[obs.name] = abs(lhs - rhs)
    return ResidualReport(out, esc)


@njit(cache=True)
def _step_all(P, X, t):
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        out[i, 0], out[i, 1], out[i, 2] = K.step_point(P, X[i, 0], X[i, 1], X[i, 2], t)
    return out


def mutual_singularity(m1, m2) -> float:
    """Half the sum of each measure's mass on the other's support."""
    m1 = np.asarray(m1, float)
    m2 = np.asarray(m2, float)
    return 0.5 * (float(m1[m2 > 0].sum()) + float(m2[m1 > 0].sum()))


def overlap_matrix(ms: PhysicalMeasureSet, physical_only: bool = True) -> np.ndarray:
    comps = ms.physical if physical_only else list(ms.components)
    full = [c.full(ms.grid.n_cells) for c in comps]
    n = len(full)
    return np.array([[mutual_singularity(full[i], full[j]) for j in range(n)] for i in range(n)])


@dataclass(frozen=True)
class AbsContinuityReport:
    resolutions: tuple
    max_density: tuple
    ratios: tuple
    bound: float

    @property
    def bounded(self) -> bool:
        return all(r <= self.bound for r in self.ratios)

    def to_dict(self) -> dict:
        return {"resolutions": [list(r) for r in self.resolutions], "max_density": list(self.max_density),
                "ratios": list(self.ratios), "bound": self.bound, "bounded": self.bounded}


def max_cell_density(h: Histogram) -> float:
    return float(h.masses.max() / h.grid.cell_volume)


def abs_continuity_diagnostic(histograms: Sequence[Histogram], bound: float = 4.0) -> AbsContinuityReport:
    """Growth of ``max(cell mass / cell volume)`` along successive refinements.

    An absolutely continuous measure with bounded density keeps the ratio
    near 1 per halving of the cell size; mass on a point grows it by 8.
    """
    dens = [max_cell_density(h) for h in histograms]
    ratios = tuple(dens[i + 1] / dens[i] for i in range(len(dens) - 1))
    return AbsContinuityReport(tuple(h.grid.res for h in histograms), tuple(dens), ratios, bound)


def component_series(model: ModelParams, kernel: NoiseKernel, resolutions: Sequence[int],
                     samples_per_cell: int = 64, seed: int = 0) -> list:
    """The Q-meeting component with the most mass in Q at each resolution."""
    out = []
    for r in resolutions:
        ms = components_for(model, kernel, r, samples_per_cell, seed)
        if not ms.physical:
            out.append(None)
            continue
        qcells = set(ms.grid.cells_in_box(model.regions.Q_box).tolist())
        best = max(ms.physical, key=lambda c: c.density[np.isin(c.cells, list(qcells))].sum())
        out.append(best.histogram(ms.grid))
    return out


def component_means(ms: PhysicalMeasureSet, model: ModelParams,
                    observables: Optional[Sequence[Observable]] = None) -> np.ndarray:
    """Cell-averaged integrals of the observable family, one row per physical component."""
    if observables is None:
        observables = observable_family(model)
    hw = 0.5 * ms.grid.spacing
    rows = []
    for c in ms.physical:
        X = ms.grid.centers(c.cells)
        rows.append([float(np.dot(c.density, o.averaged(X, hw))) for o in observables])
    return np.array(rows).reshape(len(rows), len(observables))


@dataclass(frozen=True)
class BasinPartition:
    alpha: np.ndarray
    unassigned: float
    n_sequences: int
    assignments: np.ndarray
    distances: np.ndarray

    @property
    def standard_errors(self) -> np.ndarray:
        a = np.asarray(self.alpha)
        return np.sqrt(a * (1 - a) / max(self.n_sequences, 1))

    def to_dict(self) -> dict:
        return {"alpha": [float(a) for a in self.alpha], "unassigned": float(self.unassigned),
                "n_sequences": self.n_sequences,
                "standard_errors": [float(s) for s in self.standard_errors],
                "sum": float(np.sum(self.alpha) + self.unassigned)}


def basin_partition(model: ModelParams, kernel: NoiseKernel, x, components: PhysicalMeasureSet,
                    n_sequences: int, horizon: int, seed: int, threshold: float = 0.1) -> BasinPartition:
    """Assign each sampled sequence to the component its time averages approach.

    The seven-observable Birkhoff vector of each orbit is compared with the
    component means; the nearest mean wins when it is closer than
    ``threshold`` (Euclidean), otherwise the sequence is unassigned, as are
    escaped orbits.  Weights are integer counts over ``n_sequences`` so they
    sum exactly.
    """
    vecs, esc = birkhoff_vectors(model, kernel, x, n_sequences, horizon, seed)
    means = component_means(components, model)
    l = len(means)
    assign = np.full(n_sequences, -1, np.int64)
    dist = np.full(n_sequences, np.inf)
    if l:
        d = np.linalg.norm(vecs[:, None, :] - means[None, :, :], axis=2)
        best = np.argmin(d, axis=1)
        dist = d[np.arange(n_sequences), best]
        ok = (esc < 0) & (dist < threshold)
        assign[ok] = best[ok]
    counts = np.bincount(assign[assign >= 0], minlength=l)
    alpha = counts / n_sequences
    unassigned = (n_sequences - counts.sum()) / n_sequences
    return BasinPartition(alpha, float(unassigned), int(n_sequences), assign, dist)


def mixture_fit(hist: Histogram, components: PhysicalMeasureSet) -> np.ndarray:
    """Least-squares weights of ``hist`` on the physical component densities.

    Weights are nonnegative and sum to the histogram's on-grid mass.
    """
    comps = components.physical
    l = len(comps)
    if l == 0:
        return np.zeros(0)
    total = float(hist.masses.sum())
    if l == 1:
        return np.array([total])
    cells = np.unique(np.concatenate([c.cells for c in comps] + [hist.support()]))
    M = np.stack([c.full(hist.grid.n_cells)[cells] for c in comps], axis=1)
    h = hist.masses[cells]
    G = M.T @ M
    g = M.T @ h
    res = minimize(lambda w: w @ G @ w - 2 * g @ w, np.full(l, total / l), jac=lambda w: 2 * (G @ w - g),
                   bounds=[(0, None)] * l, constraints=[{"type": "eq", "fun": lambda w: w.sum() - total}],
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    return np.asarray(res.x)


def mixture_distance(hist: Histogram, components: PhysicalMeasureSet, weights) -> float:
    """Total variation between ``hist`` and the fitted mixture, on the grid."""
    mix = np.zeros(hist.grid.n_cells)
    for w, c in zip(weights, components.physical):
        mix[c.cells] += w * c.density
    return total_variation(hist.masses, mix)


# --- exports ----------------------------------------------------------------

def component_csv(grid: Grid3, comp: Component) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "z", "x1", "x2", "mass"])
    X = grid.centers(comp.cells)
    for c, x, m in zip(comp.cells, X, comp.density):
        w.writerow([int(c), repr(float(x[0])), repr(float(x[1])), repr(float(x[2])), repr(float(m))])
    return buf.getvalue()


def summary(ms: PhysicalMeasureSet, residuals: Optional[Sequence[float]] = None) -> dict:
    comps = ms.physical
    out = {
        "grid": ms.grid.to_dict(),
        "count_l": ms.count_l,
        "n_closed_classes": len(ms.components),
        "components": [{"cells": c.size, "stationary_residual": c.residual, "leak": c.leak}
                       for c in comps],
        "overlap": overlap_matrix(ms).tolist(),
    }
    if residuals is not None:
        out["stationarity_residuals"] = [float(r) for r in residuals]
    return out
