"""Gauss hypergeometric function for real parameters and real arguments.

The series is summed directly for ``|z| <= 0.5``. Negative arguments go
through the Pfaff transformation and ``0.5 < z < 1`` through the linear
connection formula around ``z = 1``. When ``c - a - b`` is an integer the
connection formula degenerates; the series is then summed in place up to
``z = 0.98`` and beyond that the two neighbouring values ``b ± 1e-6`` are
averaged.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special as sc
from scipy.special import logsumexp

from povtrap.constants import (
    CONNECTION_STEP,
    CONNECTION_WINDOW,
    DIRECT_LIMIT,
    INTEGER_TOL,
    LOG_SERIES_CHUNK,
    LOG_SERIES_MAX_TERMS,
    SERIES_MAX_TERMS,
    SERIES_RADIUS,
    SERIES_RTOL,
    SERIES_STREAK,
)
from povtrap.exceptions import DomainError, NonConvergenceError, PoleError


def is_nonpositive_integer(x: float, tol: float = INTEGER_TOL) -> bool:
    return x < 0.5 and abs(x - round(x)) < tol


def ln_gamma(x: float) -> tuple[float, int]:
    """Natural log of ``|Γ(x)|`` and the sign of ``Γ(x)``

    Parameters
    ----------
    x : float
        Argument, must not be a non-positive integer

    Returns
    -------
    tuple[float, int]
        ``(ln|Γ(x)|, sign)`` with sign either 1 or -1

    Raises
    ------
    PoleError
        If ``x`` is a non-positive integer
    """
    if is_nonpositive_integer(x):
        raise PoleError(f"Gamma function has a pole at x={x!r}")
    return float(sc.gammaln(x)), int(sc.gammasgn(x))


def pochhammer(a: float, n: int) -> float:
    """Rising factorial ``(a)_n = Γ(a+n)/Γ(a)``"""
    return float(sc.poch(a, n))


def _gamma_ratio(num: tuple[float, ...], den: tuple[float, ...]) -> float:
    # Γ(num...)/Γ(den...); a pole in the denominator makes the ratio vanish
    if any(is_nonpositive_integer(d) for d in den):
        return 0.0
    log_abs = 0.0
    sign = 1
    for x in num:
        value, s = ln_gamma(x)
        log_abs += value
        sign *= s
    for x in den:
        value, s = ln_gamma(x)
        log_abs -= value
        sign *= s
    return sign * math.exp(log_abs)


def _series(a: float, b: float, c: float, z: float) -> float:
    term = 1.0
    total = 1.0
    streak = 0
    for n in range(SERIES_MAX_TERMS):
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        total += term
        if term == 0.0:
            return total
        if abs(term) < SERIES_RTOL * abs(total):
            streak += 1
            if streak >= SERIES_STREAK:
                return total
        else:
            streak = 0
    raise NonConvergenceError(
        f"2F1({a}, {b}; {c}; {z}) series did not converge in"
        f" {SERIES_MAX_TERMS} terms"
    )


def _gauss_sum(a: float, b: float, c: float) -> float:
    s = c - a - b
    if s <= 0.0:
        raise DomainError(
            f"2F1({a}, {b}; {c}; 1) diverges, c - a - b = {s} is not positive"
        )
    return _gamma_ratio((c, s), (c - a, c - b))


def _connection(a: float, b: float, c: float, z: float) -> float:
    # Expansion around z = 1, argument 1 - z lies in (0, 0.5)
    s = c - a - b
    if abs(s - round(s)) < CONNECTION_WINDOW:
        if z <= DIRECT_LIMIT:
            return _series(a, b, c, z)
        return 0.5 * (
            _connection(a, b + CONNECTION_STEP, c, z)
            + _connection(a, b - CONNECTION_STEP, c, z)
        )
    w = 1.0 - z
    first = _gamma_ratio((c, s), (c - a, c - b))
    if first != 0.0:
        first *= _series(a, b, 1.0 - s, w)
    second = _gamma_ratio((c, -s), (a, b))
    if second != 0.0:
        second *= w**s * _series(c - a, c - b, 1.0 + s, w)
    return first + second


def _evaluate(a: float, b: float, c: float, z: float) -> float:
    if z == 0.0 or a == 0.0 or b == 0.0:
        return 1.0
    if z == 1.0:
        return _gauss_sum(a, b, c)
    if z > 1.0:
        raise DomainError(f"2F1 argument z={z} lies on the branch cut [1, inf)")
    if abs(z) <= SERIES_RADIUS:
        return _series(a, b, c, z)
    if z < 0.0:
        # Pfaff: z/(z - 1) lies in (1/3, 1)
        return (1.0 - z) ** (-a) * _evaluate(a, c - b, c, z / (z - 1.0))
    return _connection(a, b, c, z)


def hyp2f1(a: float, b: float, c: float, z: float) -> float:
    """Gauss hypergeometric function ``2F1(a, b; c; z)``

    Parameters
    ----------
    a, b, c : float
        Real parameters, ``c`` must not be a non-positive integer
    z : float
        Real argument outside the branch cut ``[1, inf)``; ``z = 1`` is
        accepted when ``c - a - b > 0`` (Gauss summation)

    Returns
    -------
    float
        Function value

    Raises
    ------
    PoleError
        ``c`` is a non-positive integer
    DomainError
        ``z`` lies on the branch cut
    NonConvergenceError
        No transformation produced a convergent series
    """
    if is_nonpositive_integer(c):
        raise PoleError(f"2F1 lower parameter c={c!r} is a non-positive integer")
    if a > b:
        a, b = b, a
    return _evaluate(float(a), float(b), float(c), float(z))


def hyp2f1_regularized(a: float, b: float, c: float, z: float) -> float:
    """Regularised hypergeometric function ``2F1(a, b; c; z)/Γ(c)``

    Finite for every real ``c``; at ``c = -m`` the limiting value
    ``(a)_{m+1} (b)_{m+1} z^{m+1}/(m+1)! 2F1(a+m+1, b+m+1; m+2; z)`` is used.
    """
    if is_nonpositive_integer(c):
        m = -int(round(c))
        scale = pochhammer(a, m + 1) * pochhammer(b, m + 1) / math.factorial(m + 1)
        if scale == 0.0:
            return 0.0
        return scale * z ** (m + 1) * hyp2f1(a + m + 1, b + m + 1, m + 2.0, z)
    return hyp2f1(a, b, c, z) * float(sc.rgamma(c))


def ln_hyp2f1(a: float, b: float, c: float, z: float) -> float:
    """Natural log of ``2F1(a, b; c; z)`` for positive parameters, ``0 <= z < 1``

    Every series term is positive there, so the sum is accumulated in log
    space in numpy chunks and stays finite where the function itself
    overflows a double (large ``b``).
    """
    if min(a, b, c) <= 0.0 or not 0.0 <= z < 1.0:
        raise DomainError(
            f"log-space 2F1 needs positive parameters and 0 <= z < 1, got"
            f" ({a}, {b}; {c}; {z})"
        )
    if z == 0.0:
        return 0.0
    log_z = math.log(z)
    # Tail after a decreasing term is bounded by term/(1 - z)
    tail = -math.log1p(-z)
    total = 0.0
    log_term = 0.0
    for start in range(0, LOG_SERIES_MAX_TERMS, LOG_SERIES_CHUNK):
        k = np.arange(start, start + LOG_SERIES_CHUNK, dtype=float)
        steps = np.log((a + k) * (b + k) / ((c + k) * (k + 1.0))) + log_z
        logs = log_term + np.cumsum(steps)
        total = float(logsumexp(np.append(logs, total)))
        log_term = float(logs[-1])
        if steps[-1] < 0.0 and log_term + tail < total + math.log(SERIES_RTOL):
            return total
    raise NonConvergenceError(
        f"log-space 2F1({a}, {b}; {c}; {z}) did not converge in"
        f" {LOG_SERIES_MAX_TERMS} terms"
    )


def hyp2f1_derivative(a: float, b: float, c: float, z: float) -> float:
    """``d/dz 2F1(a, b; c; z) = (ab/c) 2F1(a+1, b+1; c+1; z)``"""
    if c == 0.0:
        raise PoleError("2F1 derivative is undefined for c=0")
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b / c * hyp2f1(a + 1.0, b + 1.0, c + 1.0, z)
