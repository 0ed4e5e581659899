"""Random unfoldings of a 3D homoclinic tangency: simulation and ergodic numerics."""

import os as _os
import warnings as _warnings

# allow up to eight workers even on small machines; results never depend on it
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, _os.cpu_count() or 1)))
_warnings.filterwarnings("ignore", message=".*TBB.*")

import numba as _numba  # noqa: E402

_numba.set_num_threads(min(_os.cpu_count() or 1, _numba.config.NUMBA_NUM_THREADS))

from .model import (Box, EscapedError, HigherOrder, ModelParams, Point, RegionGeometry,  # noqa: E402
                    RegionLabel, ValidationReport, angle_to, classify, jacobian, line_angle, norm_max,
                    slope, step, validate_params)
from .noise import NoiseKernel, NoiseSequence, RejectionBudgetExceeded, sample, sample_sequence  # noqa: E402

__version__ = "0.1.0"
