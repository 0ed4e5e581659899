"""Random orbits, their region itineraries and return statistics.

Orbit number ``j`` under a seed always uses noise stream ``j``, whether it is
computed alone by :func:`random_orbit` or inside one of the batched kernels,
so single orbits can be replayed out of any Monte Carlo run.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, NamedTuple, Optional, Sequence

import numpy as np
from numba import njit, prange

from . import _kernels as K
from ._rng import TAG_NOISE, stream_key
from .model import ModelParams, Point, RegionLabel
from .noise import NoiseKernel, NoiseSequence, RejectionBudgetExceeded

# labels allowed once an orbit has settled: U (with R and the annulus) or Q
SETTLED_LABELS = (RegionLabel.IN_R, RegionLabel.IN_Q, RegionLabel.IN_ANNULUS, RegionLabel.IN_U_ONLY)


@dataclass(frozen=True)
class OrbitRecord:
    start: Point
    sequence: NoiseSequence
    points: np.ndarray
    labels: np.ndarray
    escaped_at: Optional[int]

    @property
    def n_steps(self) -> int:
        """Number of completed steps (points recorded minus one)."""
        return len(self.points) - 1

    def label_names(self) -> list:
        return [RegionLabel(v).tag for v in self.labels]


def _packs(model: ModelParams, kernel: NoiseKernel):
    kp, kb, kc = kernel.packed
    return model.packed(), model.regions.packed(), kp, kb, kc


def random_orbit(model: ModelParams, kernel: NoiseKernel, x0, n: int, seed: int,
                 stream: int = 0) -> OrbitRecord:
    """Follow ``x0`` for ``n`` random steps, stopping early on escape.

    ``escaped_at = k`` means the step out of ``points[k]`` left the modelled
    region; the parameter drawn for that step is the last entry of the
    recorded sequence.
    """
    if n < 1:
        raise ValueError("need at least one step")
    P, G, kp, kb, kc = _packs(model, kernel)
    x0 = np.asarray(x0, float)
    pts, labels, ts, esc = K.run_orbit(P, G, kp, kb, kc, np.uint64(seed),
                                       np.uint64(TAG_NOISE + stream), x0, n)
    if np.isnan(ts).any():
        raise RejectionBudgetExceeded("rejection sampling exhausted its attempt budget")
    seq = NoiseSequence(ts.copy(), int(seed), int(stream))
    return OrbitRecord(Point(*x0), seq, pts.copy(), labels.copy(), None if esc < 0 else int(esc))


# --- return times -----------------------------------------------------------

@dataclass(frozen=True)
class ReturnTimes:
    times: tuple
    truncated: bool

    @property
    def cumulative(self) -> np.ndarray:
        """Return iterates ``R(k) = r(1) + ... + r(k)``."""
        return np.cumsum(np.asarray(self.times, dtype=np.int64))

    def to_dict(self) -> dict:
        return {"times": list(self.times), "cumulative": self.cumulative.tolist(),
                "truncated": self.truncated}


def first_entry_times(labels: Sequence, after_start: bool = True) -> ReturnTimes:
    """Return times to Q read off an itinerary.

    With ``after_start`` the labels are those of the iterates ``1, 2, ...``
    (the starting point is not part of the list); otherwise ``labels[0]``
    belongs to the starting point and is skipped.
    """
    lab = np.asarray(labels)
    offset = 1 if after_start else 0
    hits = np.flatnonzero(lab == RegionLabel.IN_Q) + offset
    if not after_start:
        hits = hits[hits >= 1]
    horizon = len(lab) - 1 + offset
    times = np.diff(np.concatenate([[0], hits])).astype(int)
    truncated = len(hits) == 0 or hits[-1] != horizon
    return ReturnTimes(tuple(int(v) for v in times), bool(truncated))


def return_times(record: OrbitRecord) -> ReturnTimes:
    """Successive return times of the recorded orbit to Q."""
    return first_entry_times(record.labels, after_start=False)


def bookkeeping_violations(labels: Sequence) -> list:
    """Indices ``k >= 1`` labelled InQ whose predecessor is not InR."""
    lab = np.asarray(labels)
    k = np.flatnonzero(lab[1:] == RegionLabel.IN_Q) + 1
    return [int(i) for i in k if lab[i - 1] != RegionLabel.IN_R]


# --- observables ------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Named function of states, vectorised over an ``(N, 3)`` array.

    ``cell_average`` optionally gives the exact mean of the function over a
    box of half-widths ``hw`` centred at each state; when absent the centre
    value is used.
    """

    name: str
    fn: Callable
    cell_average: Optional[Callable] = None

    def __call__(self, pts) -> np.ndarray:
        return self.fn(np.atleast_2d(np.asarray(pts, float)))

    def averaged(self, pts, hw) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.cell_average is None:
            return self.fn(pts)
        return self.cell_average(pts, np.asarray(hw, float))


def _coord(i):
    return lambda X: X[:, i]


def _square(i):
    return lambda X: X[:, i] ** 2


def _square_avg(i):
    return lambda X, hw: X[:, i] ** 2 + hw[i] ** 2 / 3.0


def q_indicator(model: ModelParams) -> Observable:
    box = model.regions.Q_box
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)

    def fn(X):
        return np.all((X >= lo) & (X <= hi), axis=1).astype(float)

    def avg(X, hw):
        over = np.clip(np.minimum(X + hw, hi) - np.maximum(X - hw, lo), 0.0, None)
        return np.prod(over / (2 * hw), axis=1)

    return Observable("in_Q", fn, avg)


def dist_q() -> Observable:
    q = np.asarray((0.0, 1.0, 1.0))
    return Observable("dist_q", lambda X: np.linalg.norm(X - q, axis=1))


def observable_family(model: ModelParams) -> list:
    """Coordinates, their squares and the (cell-averaged) indicator of Q."""
    fam = [Observable(n, _coord(i)) for i, n in enumerate(("z", "x1", "x2"))]
    fam += [Observable(n + "^2", _square(i), _square_avg(i)) for i, n in enumerate(("z", "x1", "x2"))]
    fam.append(q_indicator(model))
    return fam


_REGISTRY: Dict[str, Callable] = {}


def register_observable(name: str, factory: Callable) -> None:
    """Register ``factory(model) -> Observable`` under ``name``."""
    _REGISTRY[name] = factory


def get_observable(name: str, model: ModelParams) -> Observable:
    if name in _REGISTRY:
        return _REGISTRY[name](model)
    builtin = {o.name: o for o in observable_family(model)}
    builtin["dist_q"] = dist_q()
    if name not in builtin:
        raise KeyError(f"unknown observable {name!r}")
    return builtin[name]


class BirkhoffAverage(NamedTuple):
    value: float
    n_terms: int
    escaped: bool


def birkhoff_average(record: OrbitRecord, phi: Callable) -> BirkhoffAverage:
    """``(1/n) sum_{j<n} phi(points[j])`` over the orbit.

    An escaped orbit is averaged over every recorded point and flagged.
    """
    if record.escaped_at is None:
        pts = record.points[:-1] if record.n_steps >= 1 else record.points
    else:
        pts = record.points
    vals = np.asarray(phi(pts), float)
    return BirkhoffAverage(float(np.mean(vals)), len(vals), record.escaped_at is not None)


# --- batched kernels --------------------------------------------------------

_N_KEEP = 8


@njit(cache=True, parallel=True)
def _scan_returns(P, G, kp, kb, kc, seed, x0, n_seq, horizon, burn_in):
    escaped = np.full(n_seq, -1, np.int64)
    n_ret = np.zeros(n_seq, np.int64)
    first = np.zeros((n_seq, _N_KEEP), np.int64)
    last = np.zeros(n_seq, np.int64)
    max_gap = np.zeros(n_seq, np.int64)
    unsettled = np.zeros(n_seq, np.bool_)
    bad_book = np.zeros(n_seq, np.int64)
    digest = np.zeros(n_seq, np.uint64)
    nan_t = np.zeros(n_seq, np.bool_)
    for s in prange(n_seq):
        key = stream_key(seed, np.uint64(s))
        z, x1, x2 = x0[0], x0[1], x0[2]
        prev = K.classify_point(G, z, x1, x2)
        h = np.uint64(1469598103934665603)
        for k in range(horizon):
            t = K.draw_t(kp, kb, kc, key, k)
            if t != t:
                nan_t[s] = True
                break
            z, x1, x2 = K.step_point(P, z, x1, x2, t)
            if z != z:
                escaped[s] = k
                break
            lab = K.classify_point(G, z, x1, x2)
            n = k + 1
            if n > burn_in and not (lab == K.IN_R or lab == K.IN_Q or lab == K.IN_ANNULUS
                                    or lab == K.IN_U_ONLY):
                unsettled[s] = True
            if lab == K.IN_Q:
                if prev != K.IN_R:
                    bad_book[s] += 1
                gap = n - last[s]
                if gap > max_gap[s]:
                    max_gap[s] = gap
                if n_ret[s] < _N_KEEP:
                    first[s, n_ret[s]] = n
                n_ret[s] += 1
                last[s] = n
                h = (h ^ np.uint64(n)) * np.uint64(1099511628211)
            prev = lab
        digest[s] = h
    return escaped, n_ret, first, last, max_gap, unsettled, bad_book, digest, nan_t


@dataclass(frozen=True)
class ReturnScan:
    """Per-sequence return statistics from :func:`scan_returns`."""

    escaped_at: np.ndarray
    n_returns: np.ndarray
    first_returns: np.ndarray
    last_return: np.ndarray
    max_gap: np.ndarray
    unsettled: np.ndarray
    bookkeeping_violations: np.ndarray
    digest: np.ndarray
    horizon: int

    @property
    def recurrent(self) -> np.ndarray:
        """Settled, never escaped, and still returning at the horizon.

        The silence after the last return must not exceed the longest gap
        seen between returns, which is the finite-horizon stand-in for
        returns continuing forever.
        """
        tail = self.horizon - self.last_return
        return ((self.escaped_at < 0) & ~self.unsettled & (self.n_returns >= 2)
                & (tail <= self.max_gap))


def scan_returns(model: ModelParams, kernel: NoiseKernel, x0, n_sequences: int, horizon: int,
                 burn_in: int, seed: int) -> ReturnScan:
    P, G, kp, kb, kc = _packs(model, kernel)
    out = _scan_returns(P, G, kp, kb, kc, np.uint64(seed), np.asarray(x0, float),
                        int(n_sequences), int(horizon), int(burn_in))
    if out[-1].any():
        raise RejectionBudgetExceeded("rejection sampling exhausted its attempt budget")
    return ReturnScan(*out[:-1], horizon=int(horizon))


@dataclass(frozen=True)
class RecurrenceReport:
    n_sequences: int
    fraction_recurrent: float
    max_return_gap: Optional[int]
    return_times_sequence_independent: bool
    n_escaped: int
    common_returns: tuple
    horizon: int
    burn_in: int

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def classify_recurrence(model: ModelParams, kernel: NoiseKernel, x0, n_sequences: int,
                        horizon: int = 100_000, burn_in: int = 1_000, seed: int = 0) -> RecurrenceReport:
    """Monte Carlo check of recurrence to U and Q along random orbits.

    ``max_return_gap`` is the largest gap between consecutive returns over the
    recurrent sequences; ``common_returns`` lists the first return iterates
    when they agree for every sequence.
    """
    if horizon <= burn_in:
        raise ValueError("horizon must exceed burn_in")
    scan = scan_returns(model, kernel, x0, n_sequences, horizon, burn_in, seed)
    rec = scan.recurrent
    gap = int(scan.max_gap[rec].max()) if rec.any() else None
    same = bool(rec.all() and len(np.unique(scan.digest)) == 1 and len(np.unique(scan.n_returns)) == 1)
    common = tuple(int(v) for v in scan.first_returns[0, :min(_N_KEEP, scan.n_returns[0])]) if same else ()
    return RecurrenceReport(int(n_sequences), float(rec.mean()) if n_sequences else 0.0, gap, same,
                            int(np.count_nonzero(scan.escaped_at >= 0)), common, int(horizon), int(burn_in))


@njit(cache=True, parallel=True)
def _birkhoff_many(P, G, kp, kb, kc, seed, x0, n_seq, horizon, qlo, qhi):
    sums = np.zeros((n_seq, 7))
    escaped = np.full(n_seq, -1, np.int64)
    for s in prange(n_seq):
        key = stream_key(seed, np.uint64(s))
        z, x1, x2 = x0[0], x0[1], x0[2]
        for k in range(horizon):
            sums[s, 0] += z
            sums[s, 1] += x1
            sums[s, 2] += x2
            sums[s, 3] += z * z
            sums[s, 4] += x1 * x1
            sums[s, 5] += x2 * x2
            if qlo[0] <= z <= qhi[0] and qlo[1] <= x1 <= qhi[1] and qlo[2] <= x2 <= qhi[2]:
                sums[s, 6] += 1.0
            t = K.draw_t(kp, kb, kc, key, k)
            z, x1, x2 = K.step_point(P, z, x1, x2, t)
            if z != z:
                escaped[s] = k
                break
    return sums / horizon, escaped


def birkhoff_vectors(model: ModelParams, kernel: NoiseKernel, x0, n_sequences: int, horizon: int,
                     seed: int) -> tuple:
    """Time averages of the seven-observable family, one row per sequence.

    Rows of escaped sequences are not meaningful; the second return value
    gives the escape step (``-1`` when the orbit survived).
    """
    P, G, kp, kb, kc = _packs(model, kernel)
    q = model.regions.Q_box
    return _birkhoff_many(P, G, kp, kb, kc, np.uint64(seed), np.asarray(x0, float),
                          int(n_sequences), int(horizon), np.asarray(q.lo), np.asarray(q.hi))


@njit(cache=True, parallel=True)
def _endpoints(P, kp, kb, kc, seed, x0, n_seq, n):
    out = np.empty((n_seq, 3))
    for s in prange(n_seq):
        key = stream_key(seed, np.uint64(s))
        z, x1, x2 = x0[0], x0[1], x0[2]
        for k in range(n):
            t = K.draw_t(kp, kb, kc, key, k)
            z, x1, x2 = K.step_point(P, z, x1, x2, t)
        out[s, 0], out[s, 1], out[s, 2] = z, x1, x2
    return out


def endpoints(model: ModelParams, kernel: NoiseKernel, x0, n: int, n_sequences: int, seed: int) -> np.ndarray:
    """``f_t^n x0`` for sequences ``0 .. n_sequences-1``; NaN rows escaped."""
    P, _, kp, kb, kc = _packs(model, kernel)
    return _endpoints(P, kp, kb, kc, np.uint64(seed), np.asarray(x0, float), int(n_sequences), int(n))


def deterministic_orbit(model: ModelParams, x0, ts) -> np.ndarray:
    """Points of the orbit of ``x0`` under the fixed parameter list ``ts``."""
    P = model.packed()
    pts = np.empty((len(ts) + 1, 3))
    pts[0] = x0
    for k, t in enumerate(ts):
        pts[k + 1] = K.step_point(P, *pts[k], float(t))
    return pts


# --- dumps ------------------------------------------------------------------

def orbit_csv(record: OrbitRecord) -> str:
    """CSV text with columns step, z, x1, x2, label, t_used."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "z", "x1", "x2", "label", "t_used"])
    ts = record.sequence.values
    for k, (p, lab) in enumerate(zip(record.points, record.labels)):
        t = repr(float(ts[k])) if k < len(ts) else ""
        w.writerow([k, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), RegionLabel(lab).tag, t])
    return buf.getvalue()


def read_orbit_csv(text: str) -> dict:
    """Parse :func:`orbit_csv` output; leading ``#`` provenance lines are skipped."""
    body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    rows = list(csv.DictReader(io.StringIO(body)))
    return {
        "points": np.array([[float(r["z"]), float(r["x1"]), float(r["x2"])] for r in rows]),
        "labels": [r["label"] for r in rows],
        "t_used": np.array([float(r["t_used"]) for r in rows if r["t_used"]]),
    }
