from __future__ import annotations

import json
import logging
import math
import os
import sys

from povtrap.capital_model import (
    PARAM_KEYS,
    BetaLoss,
    ConstantRate,
    ExponentialRate,
    ModelParams,
    load_params_file,
)
from povtrap.closed_form import (
    ep_constants_constant_rate,
    ep_constants_exponential,
    ep_probability_constant,
    ep_probability_exponential,
    generator_residual,
    laplace_trapping,
    laplace_trapping_no_transfer,
    trapping_constants,
)
from povtrap.constants import (
    CLAMP_SLACK,
    CONTINUITY_TOL,
    DEFAULT_HORIZON,
    log,
)
from povtrap.exceptions import ValidationError
from povtrap.helper_functions import (
    format_records,
    load_loss_table,
    parse_grid,
    parse_pair,
    parse_vary,
    records_to_csv,
    trace_records,
)
from povtrap.monte_carlo import estimate_ep, estimate_trapping, trace_paths
from povtrap.policy_solver import DEFAULT_CT_BOUNDS, PolicyQuery, frontier
from povtrap.version import __version__

# Every command option by its argparse destination, the keys a configuration
# file may set besides the model parameters
OPTION_KEYS = (
    "params",
    "x",
    "x_grid",
    "delta",
    "omega_const",
    "omega_exp",
    "baseline",
    "vary",
    "trapping",
    "n",
    "seed",
    "horizon",
    "horizon_check",
    "loss_table",
    "trace",
    "trace_paths",
    "kind",
    "target",
    "b_grid",
    "ct_bounds",
    "tight",
    "format",
    "output",
    "nworkers",
    "debug_log",
)
VARY_NAMES = PARAM_KEYS + ("omega",)
DEFAULT_PATHS = 10_000
DEFAULT_TRACE_PATHS = 10
DEFAULT_CHECK_RATE = 0.02
DEFAULT_CHECK_SEED = 1
# Tolerances of the invariant suite, halved by --tight
GENERATOR_TOL = 1e-7
DERIVATIVE_TOL = 1e-6
ORDER_SLACK = 1e-10


class Runner:
    """Settings object behind the command line

    The parsed command line is copied onto the instance, a JSON configuration
    file then fills every option the command line left unset.
    """

    def __init__(self, settings: dict):
        self.command: str | None = None
        self.config: str = ".povtrap"
        for k in PARAM_KEYS + OPTION_KEYS:
            setattr(self, k, None)
        # The command line and the configuration file share the option names
        for k, v in settings.items():
            setattr(self, k, v)
        self.flag_params: dict = {
            k: settings[k] for k in PARAM_KEYS if settings.get(k) is not None
        }
        self.config_params: dict = {}

    def run(self) -> int:
        init_debug_log = self._load_config_file()
        if init_debug_log:
            self._config_logger()
        log.debug("povtrap %s running '%s'", __version__, self.command)
        handler = {
            "trap": self.cmd_trap,
            "ep": self.cmd_ep,
            "simulate": self.cmd_simulate,
            "frontier": self.cmd_frontier,
            "check": self.cmd_check,
        }.get(self.command)
        if handler is None:
            raise ValidationError(f"unknown command {self.command!r}", "command")
        return handler()

    # Configuration --------------------------------------------------------------

    def _load_config_file(self) -> bool | None:
        """Loads the configuration file, returns True when it switched on the
        debug log"""
        if not os.path.isfile(self.config):
            if self.config != ".povtrap":
                msg = f"Error settings file '{self.config}' not found"
                log.error(msg)
                raise ValidationError(msg, "config")
            return None
        try:
            with open(self.config, "r") as jsonfile:
                config_dict = json.load(jsonfile)
        except ValueError:
            msg = f"Error while parsing '{self.config}' settings file"
            log.error(msg)
            raise ValidationError(msg, "config")
        if not isinstance(config_dict, dict):
            raise ValidationError(
                f"settings file '{self.config}' must hold a JSON object", "config"
            )

        for key, value in config_dict.items():
            if key in PARAM_KEYS:
                self.config_params[key] = value
            elif key not in OPTION_KEYS:
                log.warning("Ignoring unknown key '%s' in '%s'", key, self.config)
        # Command line options take precedence
        for key in OPTION_KEYS:
            if getattr(self, key) is None:
                setattr(self, key, config_dict.get(key))

        debugging: bool = bool(config_dict.get("debug_log", False))
        if debugging and not self.debug_log:
            self.debug_log = True
            return True
        return False

    def _config_logger(self) -> None:
        """Adds a DEBUG level log file in the working directory"""
        if not self.debug_log:
            return None
        handler = logging.FileHandler("povtrap_debug.log", mode="w")
        handler.setFormatter(
            logging.Formatter("[%(levelname)-.4s - %(asctime)s] %(message)s")
        )
        handler.setLevel(logging.DEBUG)
        root = logging.getLogger()
        root.addHandler(handler)
        root.setLevel(logging.DEBUG)
        for other in root.handlers:
            if other is not handler and other.level == logging.NOTSET:
                other.setLevel(logging.WARNING)

    def _option(self, key: str, default=None):
        value = getattr(self, key)
        return default if value is None else value

    def model_params(self, fill: dict | None = None) -> ModelParams:
        """Model parameters from exactly one of the command line flags, the
        configuration file or a ``params`` file

        Parameters
        ----------
        fill : dict | None, optional
            Placeholders for keys the command does not need, by default None
        """
        sources = {
            "command line": self.flag_params,
            "configuration file": self.config_params,
            "params file": {"params": self.params} if self.params else {},
        }
        given = [name for name, values in sources.items() if values]
        if len(given) > 1:
            keys = sorted(
                set().union(*(sources[name] for name in given)),
                key=lambda k: (PARAM_KEYS + ("params",)).index(k),
            )
            raise ValidationError(
                f"model parameters given more than once ({' and '.join(given)}):"
                f" {', '.join(keys)}",
                keys[0],
            )
        if not given:
            raise ValidationError("no model parameters given", "params")
        if given[0] == "params file":
            p = load_params_file(self.params)
            values = p.to_mapping()
        else:
            values = dict(sources[given[0]])
        for key, value in (fill or {}).items():
            values.setdefault(key, value)
        p = ModelParams.from_mapping(values)
        log.debug("Model parameters: %s", p.to_mapping())
        return p

    def _x_values(self) -> list[float]:
        if self.x is not None and self.x_grid is not None:
            raise ValidationError("give either 'x' or 'x_grid', not both", "x_grid")
        if self.x_grid is not None:
            if isinstance(self.x_grid, (list, tuple)):
                return [float(v) for v in self.x_grid]
            return parse_grid(self.x_grid, "x_grid")
        if self.x is not None:
            return [float(self.x)]
        raise ValidationError("one of 'x' or 'x_grid' is required", "x")

    def _delta(self) -> float:
        delta = float(self._option("delta", 0.0))
        if not (delta >= 0.0 and math.isfinite(delta)):
            raise ValidationError(
                f"'delta' must be finite and >= 0, got {delta}", "delta"
            )
        return delta

    def _omega(self, required: bool = True):
        """``("const", ω_c)``, ``("exp", β)`` or None"""
        if self.omega_const is not None and self.omega_exp is not None:
            raise ValidationError(
                "give either 'omega_const' or 'omega_exp', not both", "omega"
            )
        if self.omega_const is not None:
            return "const", float(self.omega_const)
        if self.omega_exp is not None:
            return "exp", float(self.omega_exp)
        if required:
            raise ValidationError(
                "an extreme poverty rate ('omega_const' or 'omega_exp') is required",
                "omega",
            )
        return None

    def _sweep(self, p: ModelParams, omega: tuple | None):
        """Parameter sets of a ``vary`` sweep as ``(column, value, p, omega)``"""
        if self.vary is None:
            return [(None, None, p, omega)]
        names = VARY_NAMES if omega is not None else PARAM_KEYS
        name, grid = parse_vary(self.vary, names)
        if name == "omega":
            return [(name, v, p, (omega[0], v)) for v in grid]
        return [(name, v, p.updated(name, v), omega) for v in grid]

    def _closed_form_loss(self) -> None:
        if self.loss_table is not None:
            raise ValidationError(
                "closed forms hold for the Beta(alpha, 1) loss only; use 'simulate'"
                " with a loss table",
                "loss_table",
            )

    def _emit(self, records: list[dict]) -> None:
        text = format_records(records, self._option("format", "json"))
        if self.output:
            with open(self.output, "w") as f:
                f.write(text)
        else:
            sys.stdout.write(text)
            sys.stdout.flush()

    # Commands -------------------------------------------------------------------

    def cmd_trap(self) -> int:
        """Trapping probability, or its Laplace transform with ``delta > 0``"""
        self._closed_form_loss()
        p = self.model_params()
        xs = self._x_values()
        delta = self._delta()
        records = []
        for column, varied, params, _ in self._sweep(p, None):
            certain = delta == 0.0 and not params.net_profit
            for x in xs:
                record = {} if column is None else {column: varied}
                record["x"] = x
                record["value"] = laplace_trapping(params, delta, x)
                record["note"] = "trapping-certain" if certain else ""
                if self.baseline:
                    record["baseline"] = laplace_trapping_no_transfer(params, delta, x)
                records.append(record)
        self._emit(records)
        return 0

    def cmd_ep(self) -> int:
        """Extreme poverty probability next to its trapping upper bound"""
        self._closed_form_loss()
        p = self.model_params()
        xs = self._x_values()
        delta = self._delta()
        omega = self._omega()
        if omega[0] == "exp" and delta > 0.0:
            raise ValidationError(
                "the exponential rate has a closed form for delta = 0 only", "delta"
            )
        records = []
        for column, varied, params, (kind, rate) in self._sweep(p, omega):
            for x in xs:
                if kind == "const":
                    value = ep_probability_constant(params, rate, delta, x)
                else:
                    value = ep_probability_exponential(params, rate, x)
                if x < params.x_star:
                    bound = 1.0
                else:
                    bound = laplace_trapping(params, delta, x)
                record = {} if column is None else {column: varied}
                record.update(
                    x=x,
                    value=value,
                    trap_bound=bound,
                    bounded=value <= bound + CLAMP_SLACK,
                )
                records.append(record)
        self._emit(records)
        return 0

    def cmd_simulate(self) -> int:
        """Monte Carlo estimates with 99% confidence intervals"""
        if self.seed is None:
            raise ValidationError("simulations need a 'seed'", "seed")
        p = self.model_params()
        xs = self._x_values()
        delta = self._delta()
        n = int(self._option("n", DEFAULT_PATHS))
        seed = int(self.seed)
        horizon = float(self._option("horizon", DEFAULT_HORIZON))
        check_horizon = bool(self._option("horizon_check", True))
        workers = max(1, int(self._option("nworkers", 1)))
        if self.loss_table is not None:
            loss = load_loss_table(self.loss_table)
        else:
            loss = BetaLoss(p.alpha)
        omega = None
        if self.trapping:
            if self._omega(required=False) is not None:
                raise ValidationError(
                    "'trapping' takes no extreme poverty rate", "trapping"
                )
        else:
            kind, value = self._omega()
            omega = ConstantRate(value) if kind == "const" else ExponentialRate(value)

        records = []
        for x in xs:
            if self.trapping:
                est = estimate_trapping(
                    p, loss, x, n, horizon, seed, workers, delta, check_horizon
                )
            else:
                est = estimate_ep(
                    p, loss, omega, x, n, horizon, seed, workers, delta, check_horizon
                )
            records.append(
                {
                    "x": x,
                    "value": est.value,
                    "std_dev": est.std_dev,
                    "ci_low": est.ci_low,
                    "ci_high": est.ci_high,
                    "n": est.n,
                    "seed": est.seed,
                    "horizon": est.horizon,
                    "horizon_shift": est.horizon_shift,
                    "horizon_ok": est.horizon_ok,
                }
            )
        if self.trace:
            count = int(self._option("trace_paths", DEFAULT_TRACE_PATHS))
            paths = trace_paths(
                p, loss, xs[0], horizon, seed, count, omega, bool(self.trapping)
            )
            with open(self.trace, "w") as f:
                f.write(records_to_csv(trace_records(paths)))
            log.info("Wrote %d traced paths to %s", count, self.trace)
        self._emit(records)
        return 0

    def cmd_frontier(self) -> int:
        """Transfer rate needed for a target probability along a barrier grid"""
        self._closed_form_loss()
        kind = self._option("kind", "trapping")
        if self.target is None:
            raise ValidationError("frontier needs a 'target' probability", "target")
        if self.x is None:
            raise ValidationError("frontier needs an initial capital 'x'", "x")
        if self.b_grid is None:
            raise ValidationError("frontier needs a barrier grid 'b_grid'", "b_grid")
        if isinstance(self.b_grid, (list, tuple)):
            grid = [float(b) for b in self.b_grid]
        else:
            grid = parse_grid(self.b_grid, "b_grid")
        if not grid:
            raise ValidationError("barrier grid is empty", "b_grid")
        if self.ct_bounds is None:
            bounds = DEFAULT_CT_BOUNDS
        elif isinstance(self.ct_bounds, (list, tuple)):
            bounds = tuple(float(b) for b in self.ct_bounds)
        else:
            bounds = parse_pair(self.ct_bounds, "ct_bounds")
        rate = None
        if kind == "ep-constant":
            rate = self.omega_const
        elif kind == "ep-exponential":
            rate = self.omega_exp
        # c_t and B are solved for and swept; they may be left out
        p = self.model_params(fill={"c_t": bounds[0], "barrier": grid[-1]})
        query = PolicyQuery(
            p,
            float(self.x),
            float(self.target),
            kind=kind,
            rate=rate,
            bounds=bounds,
        )
        points = frontier(query, grid, max(1, int(self._option("nworkers", 1))))
        records = []
        for point in points:
            solved = point.c_t is not None
            records.append(
                {
                    "barrier": point.barrier,
                    "c_t": point.c_t,
                    "residual": abs(point.probability - query.target)
                    if solved
                    else None,
                    "note": point.reason or "",
                }
            )
        self._emit(records)
        return 0

    def cmd_check(self) -> int:
        """Invariant suite; exit 1 when a check fails"""
        self._closed_form_loss()
        p = self.model_params()
        scale = 0.5 if self.tight else 1.0
        omega_c = float(self._option("omega_const", DEFAULT_CHECK_RATE))
        beta = float(self._option("omega_exp", DEFAULT_CHECK_RATE))
        rows = []

        def add(name: str, value: float, tolerance: float, passed: bool | None = None):
            if passed is None:
                passed = value <= tolerance
            rows.append(
                {
                    "check": name,
                    "value": value,
                    "tolerance": tolerance,
                    "passed": bool(passed),
                }
            )

        above = [p.x_star + k * (p.barrier - p.x_star) / 4.0 for k in range(4)]
        above += [p.barrier, 1.5 * p.barrier, 3.0 * p.barrier]
        below = [0.25 * p.x_star, 0.5 * p.x_star, 0.9 * p.x_star]

        if not p.net_profit:
            value = laplace_trapping(p, 0.0, p.barrier)
            add("trapping_certain", abs(1.0 - value), 0.0)
        else:
            solutions = {
                "trapping": trapping_constants(p),
                "ep_constant": ep_constants_constant_rate(p, omega_c),
                "ep_exponential": ep_constants_exponential(p, beta),
            }
            for name, solution in solutions.items():
                for key, residual in solution.residuals().items():
                    add(f"{name}:{key}", abs(residual), CONTINUITY_TOL * scale)
                add(
                    f"{name}:derivative_continuity_fd",
                    _derivative_jump(solution.value, p.barrier),
                    DERIVATIVE_TOL * scale,
                )
                points = above[1:] if name == "trapping" else below + above[1:]
                worst = max(abs(generator_residual(solution, x)) for x in points)
                add(f"{name}:generator", worst, GENERATOR_TOL * scale)
                grid = above if name == "trapping" else below + above
                values = [solution.value(x) for x in grid]
                outside = max(max(-v, v - 1.0, 0.0) for v in values)
                add(f"{name}:bounds", outside, CLAMP_SLACK * scale)
                rise = max(max(b - a for a, b in zip(values, values[1:])), 0.0)
                add(f"{name}:monotone_in_x", rise, ORDER_SLACK * scale)
            excess = max(
                solutions["ep_constant"].value(x) - solutions["trapping"].value(x)
                for x in above
            )
            add("ordering:ep_le_trapping", max(excess, 0.0), ORDER_SLACK * scale)

        rows.extend(self._check_simulation(p, omega_c, scale))
        self._emit(rows)
        failed = [row["check"] for row in rows if not row["passed"]]
        if failed:
            log.warning("Failed checks: %s", ", ".join(failed))
            return 1
        return 0

    def _check_simulation(self, p: ModelParams, omega_c: float, scale: float):
        """Closed forms against seeded simulations; ``scale`` shrinks the
        confidence interval through the number of paths"""
        x0 = float(self._option("x", 1.5 * p.x_star))
        n = int(int(self._option("n", DEFAULT_PATHS)) / scale**2)
        seed = int(self._option("seed", DEFAULT_CHECK_SEED))
        horizon = float(self._option("horizon", DEFAULT_HORIZON))
        workers = max(1, int(self._option("nworkers", 1)))
        loss = BetaLoss(p.alpha)
        rows = []
        pairs = [
            (
                "monte_carlo:trapping",
                laplace_trapping(p, 0.0, x0),
                lambda: estimate_trapping(
                    p, loss, x0, n, horizon, seed, workers, check_horizon=False
                ),
            )
        ]
        if p.net_profit:
            pairs.append(
                (
                    "monte_carlo:ep_constant",
                    ep_probability_constant(p, omega_c, 0.0, x0),
                    lambda: estimate_ep(
                        p,
                        loss,
                        ConstantRate(omega_c),
                        x0,
                        n,
                        horizon,
                        seed,
                        workers,
                        check_horizon=False,
                    ),
                )
            )
        for name, exact, run in pairs:
            est = run()
            rows.append(
                {
                    "check": name,
                    "value": abs(exact - est.value),
                    "tolerance": est.half_width,
                    "passed": bool(est.ci_low <= exact <= est.ci_high),
                }
            )
        return rows


def _derivative_jump(func, at: float) -> float:
    """Relative gap between second order one-sided difference quotients"""
    h = 2e-5 * at
    left = (3.0 * func(at) - 4.0 * func(at - h) + func(at - 2.0 * h)) / (2.0 * h)
    right = (-3.0 * func(at) + 4.0 * func(at + h) - func(at + 2.0 * h)) / (2.0 * h)
    scale = max(abs(left), abs(right))
    if scale == 0.0:
        return 0.0
    return abs(left - right) / scale
