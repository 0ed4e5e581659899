"""Perturbation kernels on the unfolding parameter and reproducible draws.

Draws are counter based: value ``k`` of stream ``s`` under ``seed`` is a pure
function of ``(seed, s, k)``.  A noise sequence for orbit number ``j`` is
stream ``j``, so any split of the work over threads gives the same numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from ._rng import TAG_NOISE

GENERATOR_ID = "splitmix64-counter/1"


class RejectionBudgetExceeded(RuntimeError):
    """Rejection sampling ran out of attempts; the density table is suspect."""


class RngState(NamedTuple):
    seed: int
    stream: int = 0
    counter: int = 0


@dataclass(frozen=True)
class NoiseKernel:
    """Distribution of each unfolding parameter ``t_k``.

    ``Uniform`` is the normalized Lebesgue measure on ``[t0 - epsilon,
    t0 + epsilon]``.  ``AbsContinuous`` carries a piecewise polynomial shape
    on the same interval: ``breakpoints`` are in the scaled variable
    ``s = (t - t0) / epsilon`` in ``[-1, 1]`` and row ``i`` of ``coeffs``
    holds the polynomial on piece ``i`` in powers of ``s - breakpoints[i]``.
    The shape is normalized to unit mass on construction.
    """

    kind: str = "Uniform"
    t0: float = 0.06
    epsilon: float = 0.01
    breakpoints: Optional[tuple] = None
    coeffs: Optional[tuple] = None
    density_bound: Optional[float] = None
    _packed: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("Uniform", "AbsContinuous"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kind == "AbsContinuous":
            if self.breakpoints is None or self.coeffs is None:
                raise ValueError("AbsContinuous kernels need breakpoints and coeffs")
            bp = np.asarray(self.breakpoints, float)
            cf = np.atleast_2d(np.asarray(self.coeffs, float))
            if bp.ndim != 1 or len(bp) < 2 or cf.shape[0] != len(bp) - 1:
                raise ValueError("need one coefficient row per piece")
            if bp[0] != -1.0 or bp[-1] != 1.0 or np.any(np.diff(bp) <= 0):
                raise ValueError("breakpoints must increase from -1 to 1")
            object.__setattr__(self, "breakpoints", tuple(bp))
            object.__setattr__(self, "coeffs", tuple(map(tuple, cf)))
        object.__setattr__(self, "_packed", self._pack())

    @classmethod
    def uniform(cls, t0: float, epsilon: float) -> "NoiseKernel":
        return cls("Uniform", t0, epsilon)

    @classmethod
    def from_shape(cls, t0: float, epsilon: float, breakpoints, coeffs,
                   density_bound: Optional[float] = None) -> "NoiseKernel":
        return cls("AbsContinuous", t0, epsilon, tuple(breakpoints),
                   tuple(map(tuple, np.atleast_2d(coeffs))), density_bound)

    @property
    def support(self) -> tuple:
        return (self.t0 - self.epsilon, self.t0 + self.epsilon)

    def with_epsilon(self, epsilon: float) -> "NoiseKernel":
        return NoiseKernel(self.kind, self.t0, epsilon, self.breakpoints, self.coeffs, None)

    def _pack(self):
        lo, hi = self.support
        if self.kind == "Uniform":
            kp = np.array([0.0, lo, hi, 1.0 / (hi - lo), 1.0])
            return kp, np.array([lo, hi]), np.zeros((1, 1))
        d = self.epsilon
        bp = np.asarray(self.breakpoints)
        cf = np.atleast_2d(np.asarray(self.coeffs, float))
        deg = cf.shape[1] - 1
        # exact integral of the shape over [-1, 1]
        widths = np.diff(bp)
        Z = float(sum(cf[i, j] * widths[i] ** (j + 1) / (j + 1)
                      for i in range(cf.shape[0]) for j in range(deg + 1)))
        if not Z > 0:
            raise ValueError("density shape must have positive mass")
        scale = d ** -np.arange(deg + 1) / (d * Z)
        kc = cf * scale[None, :]
        kb = self.t0 + d * bp
        grid = np.linspace(lo, hi, 4097)
        vals = np.array([K.density_at(np.array([1.0, lo, hi, 0, 0]), kb, kc, g) for g in grid])
        if np.any(vals < 0) or np.count_nonzero(vals > 0) < 0.99 * len(vals):
            raise ValueError("density must be positive almost everywhere on its support")
        bound = self.density_bound if self.density_bound is not None else 1.05 * vals.max()
        if bound < vals.max():
            raise ValueError(f"density_bound {bound:g} is below the density maximum {vals.max():g}")
        budget = math.ceil(1e4 * bound)
        if 2 * budget > K.ATTEMPT_STRIDE:
            raise ValueError("density bound too large for the rejection budget")
        kp = np.array([1.0, lo, hi, bound, float(budget)])
        return kp, kb, kc

    @property
    def packed(self):
        """(kind/support/bound/budget, breakpoints in t, coefficients in t)."""
        return self._packed

    @property
    def rejection_budget(self) -> int:
        return int(self._packed[0][K.K_BUDGET])

    def density(self, t) -> np.ndarray:
        kp, kb, kc = self._packed
        t = np.asarray(t, float)
        return np.vectorize(lambda v: K.density_at(kp, kb, kc, v))(t)

    def mean(self) -> float:
        if self.kind == "Uniform":
            return self.t0
        nodes, weights = self.quadrature(64)
        return float(np.dot(nodes, weights))

    def quadrature(self, n: int) -> tuple:
        """Gauss-Legendre nodes and weights for integrals against this kernel.

        For piecewise kernels the rule is applied on every piece, so the
        result is exact for polynomial integrands of degree up to
        ``2n - 1 - deg``.
        """
        x, w = np.polynomial.legendre.leggauss(n)
        kp, kb, kc = self._packed
        if self.kind == "Uniform":
            lo, hi = self.support
            return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * w
        nodes, weights = [], []
        for i in range(len(kb) - 1):
            a, b = kb[i], kb[i + 1]
            t = 0.5 * (b - a) * x + 0.5 * (b + a)
            nodes.append(t)
            weights.append(0.5 * (b - a) * w * self.density(t))
        return np.concatenate(nodes), np.concatenate(weights)

    def validate_against(self, t_star: float) -> list:
        lo, hi = self.support
        problems = []
        if not lo > 0:
            problems.append(f"support must start above 0, got t0 - epsilon = {lo:g}")
        if not hi < t_star:
            problems.append(f"support must end below t_star = {t_star:g}, got t0 + epsilon = {hi:g}")
        return problems

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "t0": self.t0, "epsilon": self.epsilon}
        if self.kind == "AbsContinuous":
            out["breakpoints"] = list(self.breakpoints)
            out["coeffs"] = [list(r) for r in self.coeffs]
            out["density_bound"] = float(self._packed[0][K.K_BOUND])
        return out


@dataclass(frozen=True)
class NoiseSequence:
    values: np.ndarray
    seed: int
    stream: int = 0
    generator: str = GENERATOR_ID

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


def _check(values: np.ndarray) -> np.ndarray:
    if np.isnan(values).any():
        raise RejectionBudgetExceeded("rejection sampling exhausted its attempt budget")
    return values


def sample(kernel: NoiseKernel, state: RngState) -> float:
    """Single draw addressed by ``(seed, stream, counter)``."""
    kp, kb, kc = kernel.packed
    v = K.draw_sequence(kp, kb, kc, np.uint64(state.seed), np.uint64(TAG_NOISE + state.stream),
                        state.counter, 1)
    return float(_check(v)[0])


def sample_values(kernel: NoiseKernel, n: int, seed: int, stream: int = 0, start: int = 0) -> np.ndarray:
    kp, kb, kc = kernel.packed
    return _check(K.draw_sequence(kp, kb, kc, np.uint64(seed), np.uint64(TAG_NOISE + stream), start, n))


def sample_sequence(kernel: NoiseKernel, n: int, seed: int, stream: int = 0) -> NoiseSequence:
    if n < 0:
        raise ValueError("sequence length must be nonnegative")
    return NoiseSequence(sample_values(kernel, n, seed, stream), int(seed), int(stream))


def sample_matrix(kernel: NoiseKernel, n_sequences: int, n: int, seed: int) -> np.ndarray:
    """Row ``j`` is the length-``n`` sequence on stream ``j``."""
    return np.stack([sample_values(kernel, n, seed, j) for j in range(n_sequences)]) if n_sequences else np.empty((0, n))
