"""Household capital process: parameters, deterministic flows and losses.

Between loss events capital follows one of three exponential flows

* ``x >= B``        growth only, ``dx/dt = r (x - x*)``
* ``x* <= x < B``   growth plus transfers, ``dx/dt = r (x - x*) + c_T (B - x)``
* ``x < x*``        transfers only, ``dx/dt = c_T (B - x)``

and at each event of a Poisson process with intensity ``λ`` capital is
multiplied by a remaining proportion ``Z`` in ``(0, 1]``.

All flow and hitting-time functions accept floats or numpy arrays.
"""
from __future__ import annotations

import json
import math
import numbers
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from povtrap.constants import RATE_GAP, log
from povtrap.exceptions import ValidationError

# Keys of the flat parameter document, "lambda" maps onto ModelParams.lam
PARAM_KEYS = ("r", "a", "b", "c_s", "lambda", "alpha", "x_star", "barrier", "c_t")
MICRO_KEYS = ("a", "b", "c_s")


def _number(key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValidationError(f"parameter '{key}' must be a real number", key=key)
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"parameter '{key}' must be finite", key=key)
    return value


def growth_rate(a: float, b: float, c_s: float) -> float:
    """Capital growth rate ``r = (1 - a) b c_s``

    Parameters
    ----------
    a : float
        Rate of consumption, ``0 < a < 1``
    b : float
        Rate of income generation, ``b > 0``
    c_s : float
        Rate of investment or savings, ``0 < c_s < 1``

    Returns
    -------
    float
        Growth rate ``r``
    """
    if not 0.0 < a < 1.0:
        raise ValidationError(f"parameter 'a' must lie in (0, 1), got {a}", key="a")
    if not b > 0.0:
        raise ValidationError(f"parameter 'b' must be positive, got {b}", key="b")
    if not 0.0 < c_s < 1.0:
        raise ValidationError(
            f"parameter 'c_s' must lie in (0, 1), got {c_s}", key="c_s"
        )
    return (1.0 - a) * b * c_s


@dataclass(frozen=True)
class ModelParams:
    """Structural parameters of the capital process, validated on construction

    ``a``, ``b`` and ``c_s`` are the optional micro inputs; when present ``r``
    must equal ``growth_rate(a, b, c_s)``. Use `ModelParams.from_mapping` to
    derive ``r`` from them.
    """

    r: float
    lam: float
    alpha: float
    x_star: float
    barrier: float
    c_t: float
    a: float | None = None
    b: float | None = None
    c_s: float | None = None

    def __post_init__(self):
        if not self.r > 0.0:
            raise ValidationError(f"parameter 'r' must be positive, got {self.r}", "r")
        if not self.lam > 0.0:
            raise ValidationError(
                f"parameter 'lambda' must be positive, got {self.lam}", "lambda"
            )
        if not self.alpha > 0.0:
            raise ValidationError(
                f"parameter 'alpha' must be positive, got {self.alpha}", "alpha"
            )
        if not self.x_star > 0.0:
            raise ValidationError(
                f"parameter 'x_star' must be positive, got {self.x_star}", "x_star"
            )
        if not self.c_t >= 0.0:
            raise ValidationError(
                f"parameter 'c_t' must be non-negative, got {self.c_t}", "c_t"
            )
        if not self.barrier > self.x_star:
            raise ValidationError(
                f"parameter 'barrier' must exceed x_star={self.x_star}, got"
                f" {self.barrier}",
                "barrier",
            )
        if abs(self.r - self.c_t) <= RATE_GAP:
            raise ValidationError(
                f"parameter 'c_t' must differ from the growth rate r={self.r}", "c_t"
            )
        micro = [getattr(self, k) for k in MICRO_KEYS]
        if any(v is not None for v in micro):
            if any(v is None for v in micro):
                missing = [k for k in MICRO_KEYS if getattr(self, k) is None][0]
                raise ValidationError(
                    f"parameter '{missing}' is required with the other micro inputs",
                    missing,
                )
            derived = growth_rate(*micro)
            if abs(derived - self.r) > 1e-12 * max(1.0, self.r):
                raise ValidationError(
                    f"parameter 'r'={self.r} disagrees with (1 - a) b c_s={derived}",
                    "r",
                )

    @classmethod
    def from_mapping(cls, values: Mapping) -> ModelParams:
        """Build from a flat ``{key: number}`` mapping using `PARAM_KEYS`"""
        for key in values:
            if key not in PARAM_KEYS:
                raise ValidationError(f"unknown parameter '{key}'", key=key)
        got = {k: _number(k, v) for k, v in values.items() if v is not None}
        for key in ("lambda", "alpha", "x_star", "barrier", "c_t"):
            if key not in got:
                raise ValidationError(f"parameter '{key}' is required", key=key)
        micro = {k: got[k] for k in MICRO_KEYS if k in got}
        if micro:
            for key in MICRO_KEYS:
                if key not in micro:
                    raise ValidationError(
                        f"parameter '{key}' is required with the other micro inputs",
                        key=key,
                    )
            r = growth_rate(micro["a"], micro["b"], micro["c_s"])
            if "r" in got and abs(got["r"] - r) > 1e-12 * max(1.0, r):
                raise ValidationError(
                    f"parameter 'r'={got['r']} disagrees with (1 - a) b c_s={r}",
                    key="r",
                )
        elif "r" in got:
            r = got["r"]
        else:
            raise ValidationError("parameter 'r' (or a, b, c_s) is required", key="r")
        return cls(
            r=r,
            lam=got["lambda"],
            alpha=got["alpha"],
            x_star=got["x_star"],
            barrier=got["barrier"],
            c_t=got["c_t"],
            **micro,
        )

    def to_mapping(self) -> dict:
        out = {
            "r": self.r,
            "lambda": self.lam,
            "alpha": self.alpha,
            "x_star": self.x_star,
            "barrier": self.barrier,
            "c_t": self.c_t,
        }
        if self.a is not None:
            out.update(a=self.a, b=self.b, c_s=self.c_s)
        return out

    def updated(self, key: str, value: float) -> ModelParams:
        """Copy with one parameter changed; micro inputs re-derive ``r``"""
        values = self.to_mapping()
        if key == "r":
            for k in MICRO_KEYS:
                values.pop(k, None)
        elif key in MICRO_KEYS and self.a is not None:
            values.pop("r")
        values[key] = value
        return ModelParams.from_mapping(values)

    @property
    def net_profit(self) -> bool:
        """True when ``α > λ/r``, i.e. trapping is not certain"""
        return self.alpha > self.lam / self.r

    @property
    def absorbing_below(self) -> bool:
        """Without transfers capital below x* never recovers"""
        return self.c_t == 0.0

    @property
    def x_double_star(self) -> float:
        return x_double_star(self)


def load_params_file(path: str) -> ModelParams:
    """Read a flat JSON parameter document"""
    try:
        with open(path, "r") as jsonfile:
            values = json.load(jsonfile)
    except FileNotFoundError:
        raise ValidationError(f"parameter file '{path}' not found", key="params")
    except ValueError:
        raise ValidationError(
            f"error while parsing parameter file '{path}'", key="params"
        )
    if not isinstance(values, dict):
        raise ValidationError(
            f"parameter file '{path}' must hold a flat key/value object", key="params"
        )
    log.debug("Loaded parameters from %s: %s", path, values)
    return ModelParams.from_mapping(values)


def x_double_star(p: ModelParams) -> float:
    """Flow constant of the transfer regime ``(c_T B - r x*)/(r - c_T)``"""
    gap = p.r - p.c_t
    if abs(gap) <= RATE_GAP:
        raise ValidationError("r - c_t vanishes, x** is undefined", key="c_t")
    return (p.c_t * p.barrier - p.r * p.x_star) / gap


def drift(p: ModelParams, x):
    """``r [x - x*]^+ + c_T [B - x]^+``"""
    x = np.asarray(x, dtype=float)
    return p.r * np.maximum(x - p.x_star, 0.0) + p.c_t * np.maximum(p.barrier - x, 0.0)


def flow_above(p: ModelParams, t, x):
    return (x - p.x_star) * np.exp(p.r * t) + p.x_star


def flow_mid(p: ModelParams, t, x):
    xx = x_double_star(p)
    return (x + xx) * np.exp((p.r - p.c_t) * t) - xx


def flow_below(p: ModelParams, t, x):
    """Reverting flow towards B below x*. Returns ``x`` unchanged when
    ``p.absorbing_below`` (no transfers)."""
    if p.absorbing_below:
        return x
    return (x - p.barrier) * np.exp(-p.c_t * t) + p.barrier


def time_to_barrier(p: ModelParams, x):
    """Time for the middle flow started at ``x`` to reach B (``inf`` if never)"""
    xx = x_double_star(p)
    with np.errstate(divide="ignore"):
        return np.log((p.barrier + xx) / (x + xx)) / (p.r - p.c_t)


def time_to_critical(p: ModelParams, x):
    """Time for the reverting flow started below x* to reach x*

    Infinite when ``p.absorbing_below``.
    """
    if p.absorbing_below:
        return np.full_like(np.asarray(x, dtype=float), math.inf)[()]
    return -np.log((p.x_star - p.barrier) / (x - p.barrier)) / p.c_t


class LossDistribution:
    """Distribution of the remaining proportion ``Z`` in ``(0, 1]``"""

    def inverse_cdf(self, u):
        raise NotImplementedError


@dataclass(frozen=True)
class BetaLoss(LossDistribution):
    """``Z ~ Beta(α, 1)``, CDF ``z^α`` on ``(0, 1]``"""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValidationError(
                f"loss shape 'alpha' must be positive, got {self.alpha}", "alpha"
            )

    def cdf(self, z):
        return np.clip(z, 0.0, 1.0) ** self.alpha

    def inverse_cdf(self, u):
        return u ** (1.0 / self.alpha)


@dataclass(frozen=True)
class TableLoss(LossDistribution):
    """Piecewise-linear inverse CDF through the points ``(u_i, z_i)``"""

    u: tuple
    z: tuple

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if u.ndim != 1 or u.size < 2 or u.size != z.size:
            raise ValidationError("loss table needs at least two (u, z) rows", "u")
        if u[0] != 0.0 or u[-1] != 1.0 or np.any(np.diff(u) <= 0.0):
            raise ValidationError(
                "loss table column 'u' must increase strictly from 0 to 1", "u"
            )
        if np.any(np.diff(z) < 0.0) or z[0] <= 0.0 or z[-1] > 1.0:
            raise ValidationError(
                "loss table column 'z' must be non-decreasing within (0, 1]", "z"
            )

    def inverse_cdf(self, u):
        return np.interp(u, self.u, self.z)


@dataclass(frozen=True)
class CustomLoss(LossDistribution):
    """Inverse CDF supplied as a callable. It must be picklable (a module
    level function) to be used with more than one worker."""

    func: Callable

    def inverse_cdf(self, u):
        return self.func(u)


def sample_loss(d: LossDistribution, u):
    """Map uniform variates ``u`` in ``(0, 1]`` onto remaining proportions"""
    return d.inverse_cdf(u)


class OmegaRate:
    """Extreme poverty rate function on ``(0, x*]``"""

    def __call__(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantRate(OmegaRate):
    omega_c: float

    def __post_init__(self):
        if not self.omega_c >= 0.0:
            raise ValidationError(
                f"parameter 'omega_const' must be non-negative, got {self.omega_c}",
                "omega_const",
            )

    def __call__(self, x):
        return self.omega_c + 0.0 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ExponentialRate(OmegaRate):
    """``ω(x) = β/x``"""

    beta: float

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValidationError(
                f"parameter 'omega_exp' must be positive, got {self.beta}", "omega_exp"
            )

    def __call__(self, x):
        return self.beta / np.asarray(x, dtype=float)


@dataclass(frozen=True)
class CustomRate(OmegaRate):
    func: Callable

    def __call__(self, x):
        return self.func(x)
