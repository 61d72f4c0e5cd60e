import logging
import sys
from multiprocessing import freeze_support

from .exceptions import PovtrapError
from .interface import commandline_args
from .runner import Runner
from .version import __version__

__all__ = ["__version__"]


def error_exit(error_str: str, code: int = 1):
    print(f"ERROR: {error_str}", file=sys.stderr)
    sys.exit(code)


def main():
    #
    freeze_support()
    parser = commandline_args(__name__)
    args = parser.parse_args()

    if args.version:
        print(__version__)
        sys.exit(0)

    if args.command is None:
        parser.print_usage(sys.stderr)
        error_exit("a command is required (trap, ep, simulate, frontier, check)", 2)

    logging.basicConfig(
        format="[%(levelname)-.4s - %(asctime)s] %(message)s",
        datefmt="%H:%M:%S",
        level=logging.WARNING,
    )
    runner = Runner(settings=vars(args))
    runner._config_logger()
    try:
        code = runner.run()
    except PovtrapError as err:
        error_exit(err.message, err.code)
    sys.exit(code)
