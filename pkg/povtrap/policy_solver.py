"""Invert closed-form probabilities for the transfer rate or the barrier."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from multiprocessing import Pool

from scipy import optimize

from povtrap.capital_model import ModelParams
from povtrap.closed_form import (
    ep_probability_constant,
    ep_probability_exponential,
    trapping_probability,
)
from povtrap.constants import MAX_BISECTIONS, RESIDUAL_TOL, log
from povtrap.exceptions import (
    NoBracketError,
    NonConvergenceError,
    NonMonotoneError,
    NumericalError,
    ValidationError,
)

KINDS = ("trapping", "ep-constant", "ep-exponential")
SOLVE_FOR = ("c_t", "barrier")
DEFAULT_CT_BOUNDS = (1e-4, 1e3)
# Relative distance kept between a trial c_t and the growth rate r
RATE_MARGIN = 1e-7


@dataclass(frozen=True)
class PolicyQuery:
    """What to solve for, at which target probability and within which bounds

    ``rate`` is ``ω_c`` for ``ep-constant`` and ``β`` for ``ep-exponential``.
    The value of the solved parameter inside ``params`` is ignored.
    """

    params: ModelParams
    x0: float
    target: float
    kind: str = "trapping"
    rate: float | None = None
    solve_for: str = "c_t"
    bounds: tuple[float, float] = DEFAULT_CT_BOUNDS

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ValidationError(
                f"'target' must lie in (0, 1), got {self.target}", "target"
            )
        if self.kind not in KINDS:
            raise ValidationError(
                f"'kind' must be one of {', '.join(KINDS)}, got {self.kind!r}", "kind"
            )
        if self.kind != "trapping" and not (self.rate and self.rate > 0.0):
            raise ValidationError(
                f"kind {self.kind!r} needs a positive extreme poverty rate", "rate"
            )
        if self.solve_for not in SOLVE_FOR:
            raise ValidationError(
                f"can only solve for {' or '.join(SOLVE_FOR)}, got {self.solve_for!r}",
                "solve_for",
            )
        lo, hi = self.bounds
        if not 0.0 < lo < hi:
            raise ValidationError(
                f"search bounds must satisfy 0 < lo < hi, got ({lo}, {hi})", "bounds"
            )
        if self.solve_for == "barrier" and not lo > self.params.x_star:
            raise ValidationError(
                f"barrier bounds must lie above x_star={self.params.x_star}", "bounds"
            )
        if self.kind == "trapping" and self.x0 < self.params.x_star:
            raise ValidationError(
                f"initial capital 'x'={self.x0} lies below x_star", "x"
            )


def _away_from_rate(p: ModelParams, c_t: float) -> float:
    margin = RATE_MARGIN * p.r
    if abs(c_t - p.r) < margin:
        return p.r + math.copysign(margin, c_t - p.r)
    return c_t


def policy_probability(q: PolicyQuery, value: float) -> float:
    """Closed-form probability with the solved parameter set to ``value``"""
    if q.solve_for == "c_t":
        value = _away_from_rate(q.params, value)
    p = q.params.updated(q.solve_for, value)
    if q.kind == "trapping":
        return trapping_probability(p, q.x0)
    if q.kind == "ep-constant":
        return ep_probability_constant(p, q.rate, 0.0, q.x0)
    return ep_probability_exponential(p, q.rate, q.x0)


def solve(q: PolicyQuery) -> float:
    """Bisect for the parameter value attaining ``q.target``

    Raises
    ------
    NoBracketError
        The target lies outside the probabilities at the bounds
    NonMonotoneError
        The probability increases from the lower to the upper bound
    """
    lo, hi = q.bounds
    p_lo = policy_probability(q, lo)
    p_hi = policy_probability(q, hi)
    if p_lo < p_hi:
        raise NonMonotoneError(
            f"probability increases in {q.solve_for} over [{lo}, {hi}]"
            f" ({p_lo:.6g} -> {p_hi:.6g})"
        )
    if not p_lo >= q.target >= p_hi:
        raise NoBracketError(
            f"target not attainable for {q.solve_for}", p_lo, p_hi, q.target
        )
    if p_lo == q.target:
        return lo
    if p_hi == q.target:
        return hi
    root, result = optimize.bisect(
        lambda v: policy_probability(q, v) - q.target,
        lo,
        hi,
        xtol=1e-14,
        maxiter=MAX_BISECTIONS,
        full_output=True,
        disp=False,
    )
    residual = abs(policy_probability(q, root) - q.target)
    log.debug(
        "Solved %s=%r in %d iterations, residual %.3e",
        q.solve_for,
        root,
        result.iterations,
        residual,
    )
    if not result.converged or residual > RESIDUAL_TOL:
        raise NonConvergenceError(
            f"bisection for {q.solve_for} stopped at {root!r} with residual"
            f" {residual:.3e}"
        )
    return root


@dataclass(frozen=True)
class FrontierPoint:
    """Solved transfer rate at one barrier; ``c_t`` is None when unattainable"""

    barrier: float
    c_t: float | None
    probability: float | None
    reason: str | None = None


def _frontier_point(q: PolicyQuery, barrier: float) -> FrontierPoint:
    point = replace(
        q,
        params=q.params.updated("barrier", barrier),
        solve_for="c_t",
    )
    try:
        c_t = solve(point)
    except NoBracketError as err:
        return FrontierPoint(barrier, None, None, f"no bracket: {err.message}")
    except NumericalError as err:
        return FrontierPoint(barrier, None, None, f"numerical error: {err.message}")
    return FrontierPoint(barrier, c_t, policy_probability(point, c_t))


def frontier(q: PolicyQuery, grid, workers: int = 1) -> list[FrontierPoint]:
    """Transfer rate required at each barrier of ``grid`` (solved
    independently, output in grid order)"""
    grid = [float(b) for b in grid]
    if not grid:
        raise ValidationError("barrier grid is empty", "b_grid")
    if any(b <= q.params.x_star for b in grid):
        raise ValidationError(
            f"barrier grid values must exceed x_star={q.params.x_star}", "b_grid"
        )
    if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
        raise ValidationError("barrier grid must be strictly increasing", "b_grid")
    if workers <= 1 or len(grid) == 1:
        points = [_frontier_point(q, b) for b in grid]
    else:
        pool = Pool(processes=workers)
        results = [pool.apply_async(_frontier_point, args=(q, b)) for b in grid]
        pool.close()
        pool.join()
        points = [result.get() for result in results]
    for point in points:
        if point.c_t is None:
            log.info(
                "Frontier point B=%g unattainable: %s", point.barrier, point.reason
            )
    return points
