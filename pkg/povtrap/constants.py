from __future__ import annotations

import logging
from dataclasses import dataclass

log = logging.getLogger(__name__)

# Special functions
INTEGER_TOL = 1e-9
SERIES_RTOL = 1e-16
SERIES_STREAK = 3
SERIES_MAX_TERMS = 10_000
# |z| at or below which the Gauss series is summed directly
SERIES_RADIUS = 0.5
# Symmetric step used when c - a - b sits on an integer in the 1 - z connection
CONNECTION_STEP = 1e-6
CONNECTION_WINDOW = 1e-6
# Below this argument a degenerate connection falls back to the plain series
DIRECT_LIMIT = 0.98
# Log-space summation of positive series that overflow a double
LOG_SERIES_CHUNK = 4096
LOG_SERIES_MAX_TERMS = 2_000_000

# Model
RATE_GAP = 1e-12
# Relative nudge of lambda away from degenerate hypergeometric exponents
EXPONENT_NUDGE = 1e-9

# Closed forms
CONTINUITY_TOL = 1e-9
CLAMP_SLACK = 1e-10
MAX_CONDITION = 1e13
EQUILIBRATION_SWEEPS = 8

# Monte Carlo
CI_QUANTILE = 2.81
DEFAULT_HORIZON = 400.0
MIN_PATHS = 100
BLOCK_SIZE = 2048
DRAW_CHUNK = 256
QUAD_ABS_TOL = 1e-10
# e^psi underflows to zero below this accumulated hazard
PSI_FLOOR = -800.0

# Policy solver
RESIDUAL_TOL = 1e-8
MAX_BISECTIONS = 200

# Output
SIG_DIGITS = 12
NA_MARK = "NA"
WORKERS_ENV = "POVTRAP_WORKERS"
DEFAULT_WORKERS = 4


@dataclass(frozen=True)
class REFERENCE_info:
    """Reference household: consumption a, income b, savings c_s give r = 1.44."""

    a: float = 0.1
    b: float = 4.0
    c_s: float = 0.4
    lam: float = 1.0
    alpha: float = 0.8
    x_star: float = 1.0
    barrier: float = 2.0
    c_t: float = 0.25


REFERENCE = REFERENCE_info()
