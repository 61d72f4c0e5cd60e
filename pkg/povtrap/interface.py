from __future__ import annotations

import argparse
import os

from povtrap.constants import DEFAULT_WORKERS, WORKERS_ENV


def _default_workers() -> int:
    try:
        return int(os.environ.get(WORKERS_ENV, DEFAULT_WORKERS))
    except ValueError:
        return DEFAULT_WORKERS


def commandline_args(name: str = "povtrap") -> argparse.ArgumentParser:
    """Parses the command line arguments of the poverty trap calculator

    Returns
    -------
    argparse.ArgumentParser
        command line arguments
    """

    parser = argparse.ArgumentParser(
        description="povtrap - poverty trap and extreme poverty probabilities",
        prog=name,
        usage="%(prog)s [options] COMMAND [command options]",
        formatter_class=lambda prog: argparse.HelpFormatter(prog, max_help_position=60),
        epilog=(
            "Model parameters and all command options can also be set in a"
            " configuration file, by default named '.povtrap' (other names/paths can"
            " be specified via -c or --config), using the option destination names"
            " as keys, e.g. {\"lambda\": 1, \"x_grid\": \"1:6:0.1\"}."
        ),
    )

    # General options ----------------------------------------------------------
    parser.add_argument(
        "-v",
        "--version",
        action="store_true",
        help="Print version number and exit",
    )
    parser.add_argument(
        "-c",
        "--config",
        type=str,
        default=".povtrap",
        help="Configuration options file (default file name: %(default)s)",
    )
    parser.add_argument(
        "-n",
        "--nworkers",
        type=int,
        default=_default_workers(),
        metavar="INTEGER",
        help=(
            "Number of worker processes for simulations and frontiers (default:"
            f" ${WORKERS_ENV} or %(default)s)"
        ),
    )
    parser.add_argument(
        "--debug_log",
        action="store_true",
        help="Write a debug log file povtrap_debug.log to the working directory",
    )

    # Shared option groups, attached to every command -------------------------
    model = argparse.ArgumentParser(add_help=False)
    _model_args(model)
    output = argparse.ArgumentParser(add_help=False)
    _output_args(output)
    state = argparse.ArgumentParser(add_help=False)
    _state_args(state)
    omega = argparse.ArgumentParser(add_help=False)
    _omega_args(omega)

    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    # trap ---------------------------------------------------------------------
    trap = commands.add_parser(
        "trap",
        parents=[model, state, output],
        help="Trapping probability or Laplace transform of the trapping time",
    )
    trap.add_argument(
        "--baseline",
        action="store_true",
        default=None,
        help="Add the probability without cash transfers as column 'baseline'",
    )
    _vary_arg(trap)

    # ep -----------------------------------------------------------------------
    ep = commands.add_parser(
        "ep",
        parents=[model, state, omega, output],
        help="Probability (or Laplace transform of the time) of extreme poverty",
    )
    _vary_arg(ep)
    ep.add_argument(
        "--loss-table",
        type=str,
        metavar="FILE",
        help=argparse.SUPPRESS,
    )

    # simulate -----------------------------------------------------------------
    simulate = commands.add_parser(
        "simulate",
        parents=[model, state, omega, output],
        help="Monte Carlo estimates with 99%% confidence intervals",
    )
    group = simulate.add_argument_group("Simulation options")
    group.add_argument(
        "--trapping",
        action="store_true",
        default=None,
        help="Estimate the trapping probability instead of extreme poverty",
    )
    group.add_argument(
        "--n",
        type=int,
        metavar="INTEGER",
        help="Number of simulated paths (default: 10000)",
    )
    group.add_argument(
        "--seed",
        type=int,
        metavar="INTEGER",
        help="Seed of the random streams (required)",
    )
    group.add_argument(
        "--horizon",
        type=float,
        metavar="T",
        help="Simulation horizon standing in for infinity (default: 400)",
    )
    group.add_argument(
        "--no-horizon-check",
        dest="horizon_check",
        action="store_false",
        default=None,
        help="Skip the rerun at twice the horizon",
    )
    group.add_argument(
        "--loss-table",
        type=str,
        metavar="FILE",
        help="CSV inverse-CDF table (columns u,z) replacing the Beta(alpha,1) loss",
    )
    group.add_argument(
        "--trace",
        type=str,
        metavar="FILE",
        help="Write the first paths of the first initial capital as CSV rows",
    )
    group.add_argument(
        "--trace-paths",
        type=int,
        metavar="INTEGER",
        help="Number of traced paths (default: 10)",
    )

    # frontier -----------------------------------------------------------------
    front = commands.add_parser(
        "frontier",
        parents=[model, omega, output],
        help="Transfer rate c_t required to attain a target along a barrier grid",
    )
    group = front.add_argument_group("Frontier options")
    group.add_argument(
        "--kind",
        type=str,
        choices=("trapping", "ep-constant", "ep-exponential"),
        help="Probability to invert (default: trapping)",
    )
    group.add_argument(
        "--target",
        type=float,
        help="Target probability in (0, 1)",
    )
    group.add_argument(
        "--x",
        type=float,
        metavar="X",
        help="Initial capital",
    )
    group.add_argument(
        "--b-grid",
        type=str,
        metavar="GRID",
        help="Barrier grid, start:stop:step or a comma separated list",
    )
    group.add_argument(
        "--ct-bounds",
        type=str,
        metavar="LO,HI",
        help="Search bounds for c_t (default: 1e-4,1e3)",
    )

    # check --------------------------------------------------------------------
    check = commands.add_parser(
        "check",
        parents=[model, omega, output],
        help="Run the continuity, ordering and Monte Carlo invariant suite",
    )
    group = check.add_argument_group("Check options")
    group.add_argument(
        "--tight",
        action="store_true",
        default=None,
        help="Halve every tolerance",
    )
    group.add_argument(
        "--x",
        type=float,
        metavar="X",
        help="Initial capital of the Monte Carlo comparison (default: 1.5 x_star)",
    )
    group.add_argument(
        "--n",
        type=int,
        metavar="INTEGER",
        help="Number of simulated paths (default: 10000)",
    )
    group.add_argument(
        "--seed",
        type=int,
        metavar="INTEGER",
        help="Seed of the random streams (default: 1)",
    )
    group.add_argument(
        "--horizon",
        type=float,
        metavar="T",
        help="Simulation horizon (default: 400)",
    )
    return parser


def _model_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group(
        "Model parameters",
        "Give either these flags, a --params file or the keys in the configuration"
        " file, never more than one of them",
    )
    group.add_argument("--r", type=float, help="Capital growth rate")
    group.add_argument("--a", type=float, help="Rate of consumption (with b, c-s)")
    group.add_argument("--b", type=float, help="Rate of income generation")
    group.add_argument("--c-s", type=float, help="Rate of investment or savings")
    group.add_argument(
        "--lambda", dest="lambda", type=float, help="Intensity of loss events"
    )
    group.add_argument(
        "--alpha", type=float, help="Shape of the Beta(alpha, 1) remaining proportion"
    )
    group.add_argument("--xstar", dest="x_star", type=float, help="Critical capital")
    group.add_argument("--barrier", type=float, help="Capital barrier B")
    group.add_argument("--ct", dest="c_t", type=float, help="Cash transfer rate")
    group.add_argument(
        "--params",
        type=str,
        metavar="FILE",
        help="Flat JSON file holding the model parameters",
    )


def _state_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("Evaluation points")
    group.add_argument("--x", type=float, metavar="X", help="Initial capital")
    group.add_argument(
        "--x-grid",
        type=str,
        metavar="GRID",
        help="Initial capital grid, start:stop:step or a comma separated list",
    )
    group.add_argument(
        "--delta",
        type=float,
        help="Discount rate; 0 gives probabilities (default: 0)",
    )


def _omega_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("Extreme poverty rate")
    group.add_argument(
        "--omega-const",
        type=float,
        metavar="OMEGA",
        help="Constant rate omega_c below x_star",
    )
    group.add_argument(
        "--omega-exp",
        type=float,
        metavar="BETA",
        help="Exponential rate beta/x below x_star",
    )


def _output_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("Output")
    group.add_argument(
        "--format",
        type=str,
        choices=("json", "csv"),
        help="JSON lines or CSV (default: json)",
    )
    group.add_argument(
        "-o",
        "--output",
        type=str,
        metavar="FILE",
        help="Output file (default: standard output)",
    )


def _vary_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--vary",
        type=str,
        metavar="NAME=GRID",
        help=(
            "Sweep one parameter (a, b, c_s, r, lambda, alpha, x_star, barrier, c_t,"
            " omega); rows gain a leading column NAME"
        ),
    )
