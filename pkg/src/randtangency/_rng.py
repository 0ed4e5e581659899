"""Counter-based uniform variates.

Every draw is a pure function of ``(seed, stream, counter)``: a SplitMix64
finaliser applied to a per-stream key plus a Weyl increment.  Nothing is
carried between calls, so chunked, threaded and serial evaluation agree
bit for bit.
"""

import numpy as np
from numba import njit, uint64

_GAMMA = uint64(0x9E3779B97F4A7C15)
_M1 = uint64(0xBF58476D1CE4E5B9)
_M2 = uint64(0x94D049BB133111EB)
_S30 = uint64(30)
_S27 = uint64(27)
_S31 = uint64(31)
_S11 = uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream tags keep unrelated consumers of one seed apart
TAG_NOISE = 0
TAG_ULAM_POS = 1 << 48
TAG_ULAM_T = 2 << 48
TAG_SAMPLE_POINT = 3 << 48
TAG_SAMPLE_VECTOR = 4 << 48
TAG_INTERIOR = 5 << 48


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def stream_key(seed, stream):
    return _mix(uint64(seed) + _mix(uint64(stream) * _GAMMA + _GAMMA))


@njit(cache=True, inline="always")
def uniform_from_key(key, counter):
    """Open-interval uniform on (0, 1) for ``counter`` under ``key``."""
    z = _mix(key + (uint64(counter) + uint64(1)) * _GAMMA)
    return (float(z >> _S11) + 0.5) * _INV53


@njit(cache=True)
def _uniforms(seed, streams, counters):
    out = np.empty(streams.shape[0])
    for i in range(streams.shape[0]):
        out[i] = uniform_from_key(stream_key(seed, streams[i]), counters[i])
    return out


def uniforms(seed, streams, counters):
    """Vectorised uniforms for paired ``streams`` and ``counters``."""
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    streams, counters = np.broadcast_arrays(streams, counters)
    return _uniforms(np.uint64(seed), streams.ravel().copy(), counters.ravel().copy()).reshape(streams.shape)
