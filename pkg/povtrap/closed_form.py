"""Closed-form trapping and extreme poverty probabilities.

The solution in each capital regime is a combination of Gauss hypergeometric
functions. Integration constants are found by solving the small linear
systems given by the matching conditions at the barrier ``B`` and at the
critical capital ``x*``:

* trapping, unknowns ``(A_2u, A_1l, A_2l)``: value and derivative continuity
  at ``B`` and the boundary identity
  ``(λ + δ) m(x*) - c_T (B - x*) m'(x*) = λ``
* extreme poverty, unknowns ``(A_2u, A_1m, A_2m, A_l)``: value and
  derivative continuity at ``B``, value continuity at ``x*`` and the jump
  ``m'(x*+) - m'(x*-) = ω(x*-) (1 - m(x*)) / (c_T (B - x*))`` caused by the
  rate function switching off at ``x*``

Solutions above ``x*`` are normalised at the barrier, ``(x/B)^-e`` rather
than ``(x/x*)^-e``; the lower extreme poverty solution is normalised to one
at ``x*``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from povtrap.capital_model import (
    ConstantRate,
    ExponentialRate,
    ModelParams,
    OmegaRate,
    drift,
    x_double_star,
)
from povtrap.constants import (
    CLAMP_SLACK,
    EQUILIBRATION_SWEEPS,
    EXPONENT_NUDGE,
    INTEGER_TOL,
    MAX_CONDITION,
    QUAD_ABS_TOL,
    log,
)
from povtrap.exceptions import (
    DomainError,
    ProbabilityRangeError,
    QuadratureError,
    SingularSystemError,
    ValidationError,
)
from povtrap.special_functions import hyp2f1, hyp2f1_derivative, ln_hyp2f1


def exponents(rate: float, lam: float, alpha: float, delta: float):
    """Exponent pair ``(a, b)`` of the regime with flow slope ``rate``

    Roots of ``rate e^2 + (δ + λ - α rate) e - α δ = 0``; at ``δ = 0`` they
    collapse exactly onto ``{0, α - λ/rate}``.
    """
    k = delta + lam - alpha * rate
    if delta == 0.0:
        disc = abs(k)
    else:
        disc = math.sqrt(k * k + 4.0 * rate * alpha * delta)
    return (-k - disc) / (2.0 * rate), (-k + disc) / (2.0 * rate)


def clamp_probability(value: float, where: str = "") -> float:
    """Clamp roundoff outside ``[0, 1]``; anything further out is an error"""
    if math.isnan(value) or value < -CLAMP_SLACK or value > 1.0 + CLAMP_SLACK:
        raise ProbabilityRangeError(f"probability {value!r} outside [0, 1]{where}")
    return min(max(value, 0.0), 1.0)


def _check_delta(delta: float):
    if not (delta >= 0.0 and math.isfinite(delta)):
        raise ValidationError(
            f"discount rate 'delta' must be finite and >= 0, got {delta}", "delta"
        )


def _check_from_critical(p: ModelParams, x: float):
    if not x >= p.x_star:
        raise ValidationError(
            f"initial capital 'x'={x} must not lie below x_star={p.x_star}", "x"
        )


def _check_positive_capital(x: float):
    if not x > 0.0:
        raise ValidationError(f"initial capital 'x' must be positive, got {x}", "x")


def _check_net_profit(p: ModelParams):
    if not p.net_profit:
        raise ValidationError(
            f"extreme poverty probability needs alpha > lambda/r"
            f" ({p.alpha} <= {p.lam / p.r:.6g})",
            "alpha",
        )


@dataclass(frozen=True)
class UpperSolution:
    """Decaying solution above the barrier
    ``(x/B)^-b 2F1(b, b-α+1; b-a+1; x*/x)``"""

    a: float
    b: float
    alpha: float
    x_star: float
    barrier: float

    def value(self, x: float) -> float:
        return (x / self.barrier) ** (-self.b) * hyp2f1(
            self.b, self.b - self.alpha + 1.0, self.b - self.a + 1.0, self.x_star / x
        )

    def derivative(self, x: float) -> float:
        return (
            -(self.b / x)
            * (x / self.barrier) ** (-self.b)
            * hyp2f1(
                self.b + 1.0,
                self.b - self.alpha + 1.0,
                self.b - self.a + 1.0,
                self.x_star / x,
            )
        )


@dataclass(frozen=True)
class MidSolutions:
    """Pair of independent solutions on ``[x*, B)``

    For ``r > c_T`` these are ``(x/B)^-e 2F1(e, e-α+1; e-e'+1; -x**/x)`` for
    ``e`` in ``{a, b}``. The pair centred at the stationary point ``x = -x**``
    uses ``t = 1 + x/x**`` instead:
    ``2F1(a, b; 1-ρ; t)`` and ``(t/t_B)^ρ 2F1(α-a, α-b; ρ+1; t)`` with
    ``ρ = (λ + δ)/(r - c_T)``. It is required for ``c_T > r``, where
    ``-x**/x`` exceeds one and ``t`` lies in ``(0, 1)``, and taken for
    ``r > c_T`` whenever ``|t|`` stays below ``-x**/x`` on ``[x*, B]``. There
    ``t`` is negative and ``t/t_B`` positive. Close to the stationary point
    the barrier normalised pair is flat up to roundoff and the matching
    system loses rank.
    """

    a: float
    b: float
    alpha: float
    barrier: float
    x_dstar: float
    centred: bool
    rho: float

    def _argument(self, x: float) -> float:
        z = -self.x_dstar / x
        if z >= 1.0:
            raise DomainError(
                f"middle regime argument -x**/x={z} at x={x} lies on the branch cut"
            )
        return z

    def _power(self, x: float, e: float) -> float:
        return (x / self.barrier) ** (-e)

    def values(self, x: float) -> tuple[float, float]:
        a, b, alpha = self.a, self.b, self.alpha
        if not self.centred:
            z = self._argument(x)
            return (
                self._power(x, a) * hyp2f1(a, a - alpha + 1.0, a - b + 1.0, z),
                self._power(x, b) * hyp2f1(b, b - alpha + 1.0, b - a + 1.0, z),
            )
        t = 1.0 + x / self.x_dstar
        t_b = 1.0 + self.barrier / self.x_dstar
        return (
            hyp2f1(a, b, 1.0 - self.rho, t),
            (t / t_b) ** self.rho
            * hyp2f1(alpha - a, alpha - b, self.rho + 1.0, t),
        )

    def derivatives(self, x: float) -> tuple[float, float]:
        a, b, alpha = self.a, self.b, self.alpha
        if not self.centred:
            z = self._argument(x)
            return (
                -(a / x)
                * self._power(x, a)
                * hyp2f1(a + 1.0, a - alpha + 1.0, a - b + 1.0, z),
                -(b / x)
                * self._power(x, b)
                * hyp2f1(b + 1.0, b - alpha + 1.0, b - a + 1.0, z),
            )
        t = 1.0 + x / self.x_dstar
        t_b = 1.0 + self.barrier / self.x_dstar
        return (
            hyp2f1_derivative(a, b, 1.0 - self.rho, t) / self.x_dstar,
            self.rho
            * (t / t_b) ** self.rho
            / t
            * hyp2f1(alpha - a, alpha - b, self.rho, t)
            / self.x_dstar,
        )


@dataclass(frozen=True)
class LowerSolution:
    """Bounded solution below ``x*``: ``(x/B)^κ 2F1(a, b; c; x/B)`` divided by
    its value at ``x*``. All parameters are positive, so the function is
    evaluated in log space."""

    a: float
    b: float
    c: float
    power: float
    x_star: float
    barrier: float
    ln_norm: float

    @classmethod
    def build(cls, a, b, c, power, x_star, barrier) -> LowerSolution:
        z = x_star / barrier
        ln_norm = power * math.log(z) + ln_hyp2f1(a, b, c, z)
        return cls(a, b, c, power, x_star, barrier, ln_norm)

    def value(self, x: float) -> float:
        if x <= 0.0:
            return 0.0 if self.power > 0.0 else math.exp(-self.ln_norm)
        z = x / self.barrier
        ln_power = self.power * math.log(z) if self.power else 0.0
        return math.exp(ln_power + ln_hyp2f1(self.a, self.b, self.c, z) - self.ln_norm)

    def derivative(self, x: float) -> float:
        z = x / self.barrier
        ratio = math.exp(
            ln_hyp2f1(self.a + 1.0, self.b + 1.0, self.c + 1.0, z)
            - ln_hyp2f1(self.a, self.b, self.c, z)
        )
        return self.value(x) * (
            self.power / x + self.a * self.b / (self.c * self.barrier) * ratio
        )


def _mid_centred(p: ModelParams) -> bool:
    if p.c_t > p.r:
        return True
    x_dd = x_double_star(p)
    if x_dd >= 0.0:
        return False
    # |t| is largest at B, -x**/x at x*
    return p.barrier / -x_dd - 1.0 < -x_dd / p.x_star


def _mid_degenerate(p: ModelParams, lam: float, delta: float) -> bool:
    rate = p.r - p.c_t
    if not _mid_centred(p):
        a, b = exponents(rate, lam, p.alpha, delta)
        gap = abs(b - a)
        return abs(gap - round(gap)) < INTEGER_TOL
    rho = (lam + delta) / rate
    return abs(rho - round(rho)) < INTEGER_TOL


def _effective_lambda(p: ModelParams, delta: float) -> float:
    lam = p.lam
    for _ in range(16):
        if not _mid_degenerate(p, lam, delta):
            break
        nudged = lam * (1.0 + EXPONENT_NUDGE)
        log.debug(
            "Degenerate middle regime exponents at lambda=%r, nudged to %r",
            lam,
            nudged,
        )
        lam = nudged
    return lam


def _upper(p: ModelParams, lam: float, delta: float) -> UpperSolution:
    a, b = exponents(p.r, lam, p.alpha, delta)
    return UpperSolution(a, b, p.alpha, p.x_star, p.barrier)


def _mid(p: ModelParams, lam: float, delta: float) -> MidSolutions:
    rate = p.r - p.c_t
    a, b = exponents(rate, lam, p.alpha, delta)
    centred = _mid_centred(p)
    if centred and rate > 0.0:
        log.debug("Middle regime pair centred at x=%r", -x_double_star(p))
    return MidSolutions(
        a, b, p.alpha, p.barrier, x_double_star(p), centred, (lam + delta) / rate
    )


def _equilibrate(matrix: np.ndarray):
    # Alternating square root row and column scaling
    rows = np.ones(matrix.shape[0])
    cols = np.ones(matrix.shape[1])
    scaled = matrix.copy()
    for _ in range(EQUILIBRATION_SWEEPS):
        row_scale = np.sqrt(np.abs(scaled).max(axis=1))
        col_scale = np.sqrt(np.abs(scaled).max(axis=0))
        row_scale[row_scale == 0.0] = 1.0
        col_scale[col_scale == 0.0] = 1.0
        scaled = scaled / row_scale[:, None] / col_scale[None, :]
        rows *= row_scale
        cols *= col_scale
    return scaled, rows, cols


def _solve(matrix: np.ndarray, rhs: np.ndarray, what: str):
    if not np.all(np.isfinite(matrix)):
        raise SingularSystemError(
            f"{what} system has non-finite coefficients", math.inf
        )
    # Rows and columns are equilibrated before the condition number is judged
    scaled, rows, cols = _equilibrate(matrix)
    condition = float(np.linalg.cond(scaled))
    log.debug("%s system condition number %.3e", what, condition)
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSystemError(f"{what} system is singular", condition)
    return np.linalg.solve(scaled, rhs / rows) / cols, condition


@dataclass(frozen=True)
class TrappingConstants:
    """Constants of the trapping-time Laplace transform

    ``a2_u`` multiplies the upper solution, ``a1_l`` and ``a2_l`` the two
    middle solutions (the transfer regime ``x* <= x < B``).
    """

    params: ModelParams
    delta: float
    lam: float
    a2_u: float
    a1_l: float
    a2_l: float
    upper: UpperSolution
    mid: MidSolutions
    condition: float

    def value(self, x: float) -> float:
        if x < self.params.x_star:
            return 1.0
        if x >= self.params.barrier:
            return self.a2_u * self.upper.value(x)
        m1, m2 = self.mid.values(x)
        return self.a1_l * m1 + self.a2_l * m2

    def derivative(self, x: float) -> float:
        if x < self.params.x_star:
            return 0.0
        if x >= self.params.barrier:
            return self.a2_u * self.upper.derivative(x)
        d1, d2 = self.mid.derivatives(x)
        return self.a1_l * d1 + self.a2_l * d2

    def residuals(self) -> dict[str, float]:
        p = self.params
        m1, m2 = self.mid.values(p.barrier)
        d1, d2 = self.mid.derivatives(p.barrier)
        return {
            "value_at_barrier": self.a2_u * self.upper.value(p.barrier)
            - (self.a1_l * m1 + self.a2_l * m2),
            "derivative_at_barrier": self.a2_u * self.upper.derivative(p.barrier)
            - (self.a1_l * d1 + self.a2_l * d2),
            "boundary_at_critical": (self.lam + self.delta) * self.value(p.x_star)
            - p.c_t * (p.barrier - p.x_star) * self.derivative(p.x_star)
            - self.lam,
        }


@lru_cache(maxsize=256)
def trapping_constants(p: ModelParams, delta: float = 0.0) -> TrappingConstants | None:
    """Solve for the constants of the trapping-time Laplace transform

    Parameters
    ----------
    p : ModelParams
        Model parameters, ``c_t`` must be positive
    delta : float, optional
        Discount rate, by default 0

    Returns
    -------
    TrappingConstants | None
        ``None`` when ``δ = 0`` and ``α <= λ/r``: trapping is then certain
        and no constants are needed

    Raises
    ------
    SingularSystemError
        The matching conditions are (numerically) dependent
    """
    _check_delta(delta)
    if p.absorbing_below:
        raise ValidationError(
            "transfer constants need 'c_t' > 0, use the no-transfer baseline", "c_t"
        )
    if delta == 0.0 and not p.net_profit:
        log.debug("alpha <= lambda/r: trapping is certain")
        return None
    lam = _effective_lambda(p, delta)
    upper = _upper(p, lam, delta)
    mid = _mid(p, lam, delta)
    m1b, m2b = mid.values(p.barrier)
    d1b, d2b = mid.derivatives(p.barrier)
    m1s, m2s = mid.values(p.x_star)
    d1s, d2s = mid.derivatives(p.x_star)
    gap = p.c_t * (p.barrier - p.x_star)
    matrix = np.array(
        [
            [upper.value(p.barrier), -m1b, -m2b],
            [upper.derivative(p.barrier), -d1b, -d2b],
            [0.0, (lam + delta) * m1s - gap * d1s, (lam + delta) * m2s - gap * d2s],
        ]
    )
    coef, condition = _solve(matrix, np.array([0.0, 0.0, lam]), "trapping")
    return TrappingConstants(
        p, delta, lam, coef[0], coef[1], coef[2], upper, mid, condition
    )


def laplace_trapping(p: ModelParams, delta: float, x: float) -> float:
    """Laplace transform ``E[exp(-δ τ)]`` of the trapping time from ``x >= x*``"""
    _check_delta(delta)
    _check_from_critical(p, x)
    if p.absorbing_below:
        return laplace_trapping_no_transfer(p, delta, x)
    constants = trapping_constants(p, delta)
    if constants is None:
        return 1.0
    return clamp_probability(constants.value(x), f" at x={x}")


def trapping_probability(p: ModelParams, x: float) -> float:
    """Probability of ever falling below ``x*`` from ``x >= x*``"""
    return laplace_trapping(p, 0.0, x)


def laplace_trapping_no_transfer(p: ModelParams, delta: float, x: float) -> float:
    """Trapping-time Laplace transform of the model without cash transfers

    One regime only: ``λ/(λ+δ) (x/x*)^-b F(b, b-α+1; b-a+1; x*/x)``
    normalised by the Gauss sum of the same function at ``x = x*``. The
    transfer parameters of ``p`` are ignored.
    """
    _check_delta(delta)
    _check_from_critical(p, x)
    if delta == 0.0 and not p.net_profit:
        return 1.0
    a, b = exponents(p.r, p.lam, p.alpha, delta)
    second = b - p.alpha + 1.0
    c = b - a + 1.0
    value = (
        p.lam
        / (p.lam + delta)
        * (x / p.x_star) ** (-b)
        * hyp2f1(b, second, c, p.x_star / x)
        / hyp2f1(b, second, c, 1.0)
    )
    return clamp_probability(value, f" at x={x}")


def trapping_probability_no_transfer(p: ModelParams, x: float) -> float:
    return laplace_trapping_no_transfer(p, 0.0, x)


@dataclass(frozen=True)
class EpConstants:
    """Constants of the extreme poverty solution

    ``lower_coef`` multiplies the lower solution normalised at ``x*``;
    `a1_l` / `a2_l` give it against the unnormalised hypergeometric
    function instead (this may underflow for large rates).
    """

    params: ModelParams
    delta: float
    lam: float
    rate: OmegaRate
    particular: float
    a2_u: float
    a1_m: float
    a2_m: float
    lower_coef: float
    upper: UpperSolution
    mid: MidSolutions
    lower: LowerSolution
    smooth_at_critical: bool
    condition: float

    @property
    def a1_l(self) -> float | None:
        if not isinstance(self.rate, ConstantRate):
            return None
        return self.lower_coef * math.exp(-self.lower.ln_norm)

    @property
    def a2_l(self) -> float | None:
        if not isinstance(self.rate, ExponentialRate):
            return None
        return self.lower_coef * math.exp(-self.lower.ln_norm)

    @property
    def jump_scale(self) -> float:
        p = self.params
        if self.smooth_at_critical:
            return 0.0
        return float(self.rate(p.x_star)) / (p.c_t * (p.barrier - p.x_star))

    def value(self, x: float) -> float:
        p = self.params
        if x >= p.barrier:
            return self.a2_u * self.upper.value(x)
        if x >= p.x_star:
            m1, m2 = self.mid.values(x)
            return self.a1_m * m1 + self.a2_m * m2
        return self.particular + self.lower_coef * self.lower.value(x)

    def derivative(self, x: float) -> float:
        p = self.params
        if x >= p.barrier:
            return self.a2_u * self.upper.derivative(x)
        if x >= p.x_star:
            d1, d2 = self.mid.derivatives(x)
            return self.a1_m * d1 + self.a2_m * d2
        return self.lower_coef * self.lower.derivative(x)

    def residuals(self) -> dict[str, float]:
        p = self.params
        m1b, m2b = self.mid.values(p.barrier)
        d1b, d2b = self.mid.derivatives(p.barrier)
        at_critical = self.value(p.x_star)
        below = self.particular + self.lower_coef
        return {
            "value_at_barrier": self.a2_u * self.upper.value(p.barrier)
            - (self.a1_m * m1b + self.a2_m * m2b),
            "derivative_at_barrier": self.a2_u * self.upper.derivative(p.barrier)
            - (self.a1_m * d1b + self.a2_m * d2b),
            "value_at_critical": at_critical - below,
            "derivative_at_critical": self.derivative(p.x_star)
            - self.lower_coef * self.lower.derivative(p.x_star)
            - self.jump_scale * (1.0 - at_critical),
        }


def _ep_constants(
    p: ModelParams,
    rate: OmegaRate,
    delta: float,
    lam: float,
    lower: LowerSolution,
    particular: float,
    smooth_at_critical: bool,
) -> EpConstants:
    upper = _upper(p, lam, delta)
    mid = _mid(p, lam, delta)
    m1b, m2b = mid.values(p.barrier)
    d1b, d2b = mid.derivatives(p.barrier)
    m1s, m2s = mid.values(p.x_star)
    d1s, d2s = mid.derivatives(p.x_star)
    jump = 0.0
    if not smooth_at_critical:
        jump = float(rate(p.x_star)) / (p.c_t * (p.barrier - p.x_star))
    matrix = np.array(
        [
            [upper.value(p.barrier), -m1b, -m2b, 0.0],
            [upper.derivative(p.barrier), -d1b, -d2b, 0.0],
            [0.0, m1s, m2s, -1.0],
            [0.0, d1s, d2s, jump - lower.derivative(p.x_star)],
        ]
    )
    rhs = np.array([0.0, 0.0, particular, jump * (1.0 - particular)])
    coef, condition = _solve(matrix, rhs, "extreme poverty")
    return EpConstants(
        p,
        delta,
        lam,
        rate,
        particular,
        coef[0],
        coef[1],
        coef[2],
        coef[3],
        upper,
        mid,
        lower,
        smooth_at_critical,
        condition,
    )


def _check_transfers(p: ModelParams):
    if p.absorbing_below:
        raise ValidationError(
            "extreme poverty constants need 'c_t' > 0", "c_t"
        )


@lru_cache(maxsize=256)
def ep_constants_constant_rate(
    p: ModelParams,
    omega_c: float,
    delta: float = 0.0,
    smooth_at_critical: bool = False,
) -> EpConstants:
    """Constants for a constant extreme poverty rate ``ω_c``

    The lower solution is ``ω_c/(δ+ω_c) + A_1l 2F1(a_l, b_l; α; x/B)``; the
    second lower solution is unbounded at ``0+`` and dropped.
    """
    _check_delta(delta)
    if not omega_c > 0.0:
        raise ValidationError(
            f"parameter 'omega_const' must be positive, got {omega_c}", "omega_const"
        )
    _check_transfers(p)
    if delta == 0.0:
        _check_net_profit(p)
    lam = _effective_lambda(p, delta)
    total = p.alpha * p.c_t + lam + delta + omega_c
    disc = math.sqrt(total * total - 4.0 * p.alpha * p.c_t * (delta + omega_c))
    lower = LowerSolution.build(
        (total - disc) / (2.0 * p.c_t),
        (total + disc) / (2.0 * p.c_t),
        p.alpha,
        0.0,
        p.x_star,
        p.barrier,
    )
    particular = omega_c / (delta + omega_c)
    return _ep_constants(
        p, ConstantRate(omega_c), delta, lam, lower, particular, smooth_at_critical
    )


def ep_probability_constant(
    p: ModelParams, omega_c: float, delta: float, x: float
) -> float:
    """Laplace transform of the time of extreme poverty for a constant rate;
    the extreme poverty probability at ``δ = 0``"""
    _check_delta(delta)
    _check_positive_capital(x)
    if delta == 0.0:
        _check_net_profit(p)
    if p.absorbing_below:
        # Frozen below x*: exponential clock of rate ω_c once trapped
        if not omega_c > 0.0:
            raise ValidationError(
                f"parameter 'omega_const' must be positive, got {omega_c}",
                "omega_const",
            )
        share = omega_c / (delta + omega_c)
        if x < p.x_star:
            return share
        return clamp_probability(share * laplace_trapping(p, delta, x), f" at x={x}")
    constants = ep_constants_constant_rate(p, omega_c, delta)
    return clamp_probability(constants.value(x), f" at x={x}")


@lru_cache(maxsize=256)
def ep_constants_exponential(
    p: ModelParams, beta: float, smooth_at_critical: bool = False
) -> EpConstants:
    """Constants for the exponential rate ``ω(x) = β/x`` (probability only)

    The bounded lower solution is
    ``1 + A_2l (x/B)^κ 2F1(κ, κ+α+λ/c_T; κ+α; x/B)`` with ``κ = β/(B c_T)``.
    """
    if not beta > 0.0:
        raise ValidationError(
            f"parameter 'omega_exp' must be positive, got {beta}", "omega_exp"
        )
    _check_transfers(p)
    _check_net_profit(p)
    lam = _effective_lambda(p, 0.0)
    kappa = beta / (p.barrier * p.c_t)
    lower = LowerSolution.build(
        kappa,
        kappa + p.alpha + lam / p.c_t,
        kappa + p.alpha,
        kappa,
        p.x_star,
        p.barrier,
    )
    return _ep_constants(
        p, ExponentialRate(beta), 0.0, lam, lower, 1.0, smooth_at_critical
    )


def ep_probability_exponential(p: ModelParams, beta: float, x: float) -> float:
    """Extreme poverty probability for the rate ``ω(x) = β/x``"""
    _check_positive_capital(x)
    constants = ep_constants_exponential(p, beta)
    return clamp_probability(constants.value(x), f" at x={x}")


def generator_residual(solution: TrappingConstants | EpConstants, x: float) -> float:
    """Residual of the integro-differential equation at ``x``

    ``drift m' - (λ + δ + ω) m + ω + λ ∫ m(x z) dG(z)`` with ``ω`` switched
    on below ``x*`` only. The integral runs over ``u = z^α`` with break
    points where ``x z`` crosses ``x*`` and ``B``.
    """
    p = solution.params
    rate = getattr(solution, "rate", None)
    below = x < p.x_star
    if rate is None and below:
        raise ValidationError(
            f"trapping solutions hold from x_star={p.x_star} up, got x={x}", "x"
        )
    omega = float(rate(x)) if rate is not None and below else 0.0
    points = sorted(
        u
        for u in ((p.x_star / x) ** p.alpha, (p.barrier / x) ** p.alpha)
        if 0.0 < u < 1.0
    )

    def integrand(u):
        return solution.value(x * u ** (1.0 / p.alpha))

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            integral, _ = integrate.quad(
                integrand,
                0.0,
                1.0,
                points=points or None,
                epsabs=QUAD_ABS_TOL,
                limit=200,
            )
        except integrate.IntegrationWarning as err:
            raise QuadratureError(f"loss integral at x={x} did not converge: {err}")
    lam = solution.lam
    return (
        float(drift(p, x)) * solution.derivative(x)
        - (lam + solution.delta + omega) * solution.value(x)
        + omega
        + lam * integral
    )
