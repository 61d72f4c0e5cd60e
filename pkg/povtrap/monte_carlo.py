"""Monte Carlo estimation of trapping and extreme poverty probabilities.

Paths are simulated exactly: loss epochs are exponential, between them the
capital follows the closed-form flows of `povtrap.capital_model` chained
across regime boundaries. The accumulated hazard ``Ψ <= 0`` of the extreme
poverty rate is integrated exactly per segment, so the survival probability
of a path is ``exp(Ψ)``.

Every path owns a counter-based random stream keyed by ``(seed, index)``.
Variates are drawn in fixed chunks, so a path sees the same event times and
losses whatever the horizon, the parameters or the number of workers.
Paths are simulated in lockstep blocks of `BLOCK_SIZE`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from multiprocessing import Pool

import numpy as np
from scipy import integrate

from povtrap.capital_model import (
    ConstantRate,
    ExponentialRate,
    LossDistribution,
    ModelParams,
    OmegaRate,
    flow_above,
    flow_below,
    flow_mid,
    sample_loss,
    time_to_barrier,
    time_to_critical,
)
from povtrap.constants import (
    BLOCK_SIZE,
    CI_QUANTILE,
    DEFAULT_HORIZON,
    DRAW_CHUNK,
    MIN_PATHS,
    PSI_FLOOR,
    QUAD_ABS_TOL,
    log,
)
from povtrap.exceptions import NumericalError, QuadratureError, ValidationError


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Philox generator of path ``index``, the ``index``-th child of ``seed``"""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,)))
    )


class PathStream:
    """Exponential and uniform variates of one path, drawn in fixed chunks"""

    def __init__(self, seed: int, index: int):
        self.rng = path_generator(seed, index)
        self._exp: np.ndarray | None = None
        self._uni: np.ndarray | None = None
        self._pos = DRAW_CHUNK

    def refill(self) -> tuple[np.ndarray, np.ndarray]:
        # Uniforms lie in (0, 1] so that sampled losses stay positive
        return (
            self.rng.standard_exponential(DRAW_CHUNK),
            1.0 - self.rng.random(DRAW_CHUNK),
        )

    def next(self) -> tuple[float, float]:
        if self._pos == DRAW_CHUNK:
            self._exp, self._uni = self.refill()
            self._pos = 0
        e, u = self._exp[self._pos], self._uni[self._pos]
        self._pos += 1
        return float(e), float(u)


@dataclass
class PathRecord:
    """A single simulated path

    ``events`` holds ``(time, pre-loss capital, remaining proportion)`` per
    loss. ``trapped_at`` is the first time capital fell strictly below x*.
    """

    initial_capital: float
    horizon: float
    events: list = field(default_factory=list)
    psi_exponent: float = 0.0
    trapped_at: float | None = None
    final_capital: float = math.nan
    final_time: float = 0.0


@dataclass(frozen=True)
class Estimate:
    value: float
    std_dev: float
    ci_low: float
    ci_high: float
    n: int
    seed: int
    horizon: float
    horizon_shift: float | None = None
    horizon_ok: bool | None = None

    @property
    def half_width(self) -> float:
        return CI_QUANTILE * self.std_dev / math.sqrt(self.n)


def summarize(samples: np.ndarray, seed: int, horizon: float) -> Estimate:
    """Mean with a two-sided 99% confidence interval clamped to ``[0, 1]``"""
    n = samples.size
    value = float(np.mean(samples))
    std_dev = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    half = CI_QUANTILE * std_dev / math.sqrt(n)
    return Estimate(
        value=value,
        std_dev=std_dev,
        ci_low=max(value - half, 0.0),
        ci_high=min(value + half, 1.0),
        n=n,
        seed=seed,
        horizon=horizon,
    )


def advance(p: ModelParams, x, dt):
    """Follow the deterministic flow from ``x`` for ``dt``

    Regime crossings (below x* up to x*, middle up to B) happen at the
    analytic hitting times and the flows are chained there. Capital reaching
    x* from below continues in the middle regime.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        Capital after ``dt`` and the time spent below x*
    """
    x = np.array(x, dtype=float, ndmin=1)
    left = np.array(np.broadcast_to(np.asarray(dt, dtype=float), x.shape))
    below_time = np.zeros_like(x)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        low = np.flatnonzero(x < p.x_star)
        if low.size:
            if p.absorbing_below:
                below_time[low] = left[low]
                left[low] = 0.0
            else:
                tc = time_to_critical(p, x[low])
                stay = left[low] <= tc
                s = low[stay]
                x[s] = flow_below(p, left[s], x[s])
                below_time[s] = left[s]
                left[s] = 0.0
                c = low[~stay]
                below_time[c] = tc[~stay]
                left[c] -= tc[~stay]
                x[c] = p.x_star
        mid = np.flatnonzero((left > 0.0) & (x >= p.x_star) & (x < p.barrier))
        if mid.size:
            tb = time_to_barrier(p, x[mid])
            stay = left[mid] <= tb
            s = mid[stay]
            x[s] = flow_mid(p, left[s], x[s])
            left[s] = 0.0
            c = mid[~stay]
            left[c] -= tb[~stay]
            x[c] = p.barrier
        up = np.flatnonzero((left > 0.0) & (x >= p.barrier))
        if up.size:
            x[up] = flow_above(p, left[up], x[up])
    return x, below_time


def psi_increment_constant(capital, dt_below, omega_c: float):
    """``-ω_c dt_below``; the starting capital does not enter"""
    return -omega_c * np.asarray(dt_below, dtype=float)


def psi_increment_exponential(capital, dt_below, beta: float, p: ModelParams):
    """Exact integral of ``-β/X_s`` along the reverting flow below x*"""
    capital = np.asarray(capital, dtype=float)
    dt_below = np.asarray(dt_below, dtype=float)
    return -(beta / (p.c_t * p.barrier)) * (
        p.c_t * dt_below
        + np.log(flow_below(p, dt_below, capital))
        - np.log(capital)
    )


def psi_increment_numeric(
    capital: float, dt_below: float, omega: OmegaRate, p: ModelParams
) -> float:
    """Adaptive quadrature of ``-ω(X_s)`` along the reverting flow"""
    if dt_below <= 0.0:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(
                lambda s: float(omega(flow_below(p, s, capital))),
                0.0,
                dt_below,
                epsabs=QUAD_ABS_TOL,
                epsrel=0.0,
                limit=200,
            )
        except integrate.IntegrationWarning as err:
            raise QuadratureError(
                f"hazard integral from capital {capital} over {dt_below} did not"
                f" converge: {err}"
            )
    return -value


def psi_increments(p: ModelParams, omega: OmegaRate | None, capital, dt_below):
    """Increments of Ψ for segments starting at ``capital``, dispatched on the
    rate type"""
    capital = np.asarray(capital, dtype=float)
    dt_below = np.asarray(dt_below, dtype=float)
    out = np.zeros_like(capital)
    mask = dt_below > 0.0
    if omega is None or not mask.any():
        return out
    if isinstance(omega, ConstantRate):
        out[mask] = psi_increment_constant(capital[mask], dt_below[mask], omega.omega_c)
    elif isinstance(omega, ExponentialRate) and not p.absorbing_below:
        out[mask] = psi_increment_exponential(
            capital[mask], dt_below[mask], omega.beta, p
        )
    else:
        for i in np.flatnonzero(mask):
            out[i] = psi_increment_numeric(
                float(capital[i]), float(dt_below[i]), omega, p
            )
    return out


def simulate_path(
    p: ModelParams,
    d: LossDistribution,
    x0: float,
    horizon: float,
    stream: PathStream,
    omega: OmegaRate | None = None,
    stop_at_trapping: bool = False,
) -> PathRecord:
    """Simulate one path up to ``horizon`` (or trapping when requested)"""
    record = PathRecord(initial_capital=x0, horizon=horizon)
    x = float(x0)
    t = 0.0
    while True:
        e, u = stream.next()
        t_event = t + e / p.lam
        end = min(t_event, horizon)
        moved, below = advance(p, x, end - t)
        record.psi_exponent += float(psi_increments(p, omega, [x], below)[0])
        x = float(moved[0])
        t = end
        if t_event >= horizon:
            break
        z = float(sample_loss(d, u))
        record.events.append((t, x, z))
        x *= z
        if record.trapped_at is None and x < p.x_star:
            record.trapped_at = t
            if stop_at_trapping:
                break
    record.final_capital = x
    record.final_time = t
    return record


@dataclass(frozen=True)
class BlockTask:
    params: ModelParams
    loss: LossDistribution
    omega: OmegaRate | None
    x0: float
    horizon: float
    seed: int
    start: int
    count: int
    delta: float = 0.0
    stop_at_trapping: bool = False
    snapshot: float | None = None


@dataclass
class PathBatch:
    """Per-path outcomes of a run, in path-index order"""

    psi: np.ndarray
    laplace: np.ndarray
    psi_snapshot: np.ndarray
    laplace_snapshot: np.ndarray
    trapped_at: np.ndarray
    events: np.ndarray
    final_capital: np.ndarray

    @classmethod
    def concatenate(cls, batches: list[PathBatch]) -> PathBatch:
        return cls(
            *(
                np.concatenate([getattr(b, f) for b in batches])
                for f in cls.__dataclass_fields__
            )
        )


def run_block(task: BlockTask) -> PathBatch:
    """Simulate paths ``start .. start + count - 1`` in lockstep

    With ``snapshot`` set, Ψ and the discounted sum are also recorded at that
    time, letting one run serve two horizons.
    """
    p = task.params
    m = task.count
    streams = [PathStream(task.seed, task.start + i) for i in range(m)]
    exp_buf = np.empty((m, DRAW_CHUNK))
    uni_buf = np.empty((m, DRAW_CHUNK))
    pos = np.full(m, DRAW_CHUNK)
    x = np.full(m, float(task.x0))
    t = np.zeros(m)
    psi = np.zeros(m)
    laplace = np.zeros(m)
    psi_snap = np.full(m, np.nan)
    laplace_snap = np.full(m, np.nan)
    trapped_at = np.full(m, np.nan)
    events = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    omega = task.omega
    discounted = task.delta > 0.0 and isinstance(omega, ConstantRate)

    def flow(idx, until):
        x_start = x[idx]
        t_start = t[idx]
        x_end, below = advance(p, x_start, until - t_start)
        if discounted:
            k = task.delta + omega.omega_c
            laplace[idx] += (
                omega.omega_c
                * np.exp(psi[idx] - task.delta * t_start)
                * -np.expm1(-k * below)
                / k
            )
        psi[idx] += psi_increments(p, omega, x_start, below)
        x[idx] = x_end
        t[idx] = until

    while active.any():
        idx = np.flatnonzero(active)
        for i in idx[pos[idx] == DRAW_CHUNK]:
            exp_buf[i], uni_buf[i] = streams[i].refill()
            pos[i] = 0
        e = exp_buf[idx, pos[idx]]
        u = uni_buf[idx, pos[idx]]
        pos[idx] += 1
        t_event = t[idx] + e / p.lam
        end = np.minimum(t_event, task.horizon)
        if task.snapshot is not None:
            cross = idx[(t[idx] < task.snapshot) & (end >= task.snapshot)]
            if cross.size:
                flow(cross, np.full(cross.size, task.snapshot))
                psi_snap[cross] = psi[cross]
                laplace_snap[cross] = laplace[cross]
        flow(idx, end)
        done = t_event >= task.horizon
        active[idx[done]] = False
        hit = idx[~done]
        x[hit] *= sample_loss(task.loss, u[~done])
        events[hit] += 1
        fresh = hit[(x[hit] < p.x_star) & np.isnan(trapped_at[hit])]
        trapped_at[fresh] = t[fresh]
        if task.stop_at_trapping:
            active[fresh] = False
        if omega is not None:
            active[idx[psi[idx] < PSI_FLOOR]] = False
    unset = np.isnan(psi_snap)
    psi_snap[unset] = psi[unset]
    laplace_snap[unset] = laplace[unset]
    log.debug("Simulated paths %d..%d", task.start, task.start + m - 1)
    return PathBatch(psi, laplace, psi_snap, laplace_snap, trapped_at, events, x)


def _init_block(task: BlockTask):
    # Worker side: errors come back as messages, exceptions may not unpickle
    try:
        return run_block(task), None
    except NumericalError as err:
        return None, err.message


def simulate_paths(
    p: ModelParams,
    d: LossDistribution,
    x0: float,
    n: int,
    horizon: float,
    seed: int,
    workers: int = 1,
    omega: OmegaRate | None = None,
    delta: float = 0.0,
    stop_at_trapping: bool = False,
    snapshot: float | None = None,
) -> PathBatch:
    """Simulate ``n`` paths in blocks of `BLOCK_SIZE`, fanned out to
    ``workers`` processes and reduced in block order"""
    tasks = [
        BlockTask(
            p,
            d,
            omega,
            x0,
            horizon,
            seed,
            start,
            min(BLOCK_SIZE, n - start),
            delta,
            stop_at_trapping,
            snapshot,
        )
        for start in range(0, n, BLOCK_SIZE)
    ]
    if workers <= 1 or len(tasks) == 1:
        results = [_init_block(task) for task in tasks]
    else:
        pool = Pool(processes=workers)
        pending = [pool.apply_async(_init_block, args=(task,)) for task in tasks]
        pool.close()
        pool.join()
        results = [result.get() for result in pending]
    batches = []
    for task, (batch, err) in zip(tasks, results):
        if batch is None:
            raise NumericalError(f"simulation block at path {task.start} failed: {err}")
        batches.append(batch)
    return PathBatch.concatenate(batches)


def _check_run(n: int, horizon: float, x0: float):
    if n < MIN_PATHS:
        raise ValidationError(f"number of paths 'n' must be >= {MIN_PATHS}", "n")
    if not horizon > 0.0:
        raise ValidationError(f"'horizon' must be positive, got {horizon}", "horizon")
    if not x0 > 0.0:
        raise ValidationError(f"initial capital 'x' must be positive, got {x0}", "x")


def _with_horizon_check(estimate: Estimate, doubled: Estimate, what: str) -> Estimate:
    shift = abs(doubled.value - estimate.value)
    ok = shift == 0.0 or shift < estimate.half_width
    if not ok:
        log.warning(
            "%s estimate moved by %.3g when the horizon was doubled to %g"
            " (CI half-width %.3g); the horizon may be too short",
            what,
            shift,
            2.0 * estimate.horizon,
            estimate.half_width,
        )
    return replace(estimate, horizon_shift=shift, horizon_ok=ok)


def estimate_ep(
    p: ModelParams,
    d: LossDistribution,
    omega: OmegaRate,
    x0: float,
    n: int,
    horizon: float = DEFAULT_HORIZON,
    seed: int = 0,
    workers: int = 1,
    delta: float = 0.0,
    check_horizon: bool = True,
) -> Estimate:
    """Extreme poverty probability ``mean(1 - exp(Ψ))``

    With ``delta > 0`` (constant rate only) the Laplace transform of the
    time of extreme poverty is estimated instead, each segment below x*
    contributing ``ω exp(Ψ - δt) (1 - exp(-(δ+ω) d))/(δ+ω)``.
    """
    _check_run(n, horizon, x0)
    if delta < 0.0:
        raise ValidationError(f"'delta' must be >= 0, got {delta}", "delta")
    if delta > 0.0 and not isinstance(omega, ConstantRate):
        raise ValidationError(
            "discounted extreme poverty needs a constant rate", "delta"
        )
    final = 2.0 * horizon if check_horizon else horizon
    batch = simulate_paths(
        p,
        d,
        x0,
        n,
        final,
        seed,
        workers,
        omega=omega,
        delta=delta,
        snapshot=horizon if check_horizon else None,
    )
    if delta > 0.0:
        at_horizon, at_final = batch.laplace_snapshot, batch.laplace
    else:
        at_horizon, at_final = -np.expm1(batch.psi_snapshot), -np.expm1(batch.psi)
    estimate = summarize(at_horizon, seed, horizon)
    if not check_horizon:
        return estimate
    return _with_horizon_check(
        estimate, summarize(at_final, seed, final), "Extreme poverty"
    )


def estimate_trapping(
    p: ModelParams,
    d: LossDistribution,
    x0: float,
    n: int,
    horizon: float = DEFAULT_HORIZON,
    seed: int = 0,
    workers: int = 1,
    delta: float = 0.0,
    check_horizon: bool = True,
) -> Estimate:
    """Fraction of paths trapped by ``horizon``; with ``delta > 0`` the mean of
    ``exp(-δτ)`` over trapped paths (zero otherwise)"""
    _check_run(n, horizon, x0)
    if not x0 >= p.x_star:
        raise ValidationError(
            f"initial capital 'x'={x0} must not lie below x_star={p.x_star}", "x"
        )
    if delta < 0.0:
        raise ValidationError(f"'delta' must be >= 0, got {delta}", "delta")
    final = 2.0 * horizon if check_horizon else horizon
    batch = simulate_paths(p, d, x0, n, final, seed, workers, stop_at_trapping=True)
    tau = batch.trapped_at

    def samples(until):
        with np.errstate(invalid="ignore"):
            hit = tau <= until
        return np.where(hit, np.exp(-delta * np.nan_to_num(tau)), 0.0)

    estimate = summarize(samples(horizon), seed, horizon)
    if not check_horizon:
        return estimate
    doubled = summarize(samples(final), seed, final)
    return _with_horizon_check(estimate, doubled, "Trapping")


def trace_paths(
    p: ModelParams,
    d: LossDistribution,
    x0: float,
    horizon: float,
    seed: int,
    count: int,
    omega: OmegaRate | None = None,
    stop_at_trapping: bool = False,
) -> list[PathRecord]:
    """Full records of the first ``count`` paths of a seeded run"""
    return [
        simulate_path(
            p, d, x0, horizon, PathStream(seed, i), omega, stop_at_trapping
        )
        for i in range(count)
    ]
