"""Main CLI"""

import argparse
import logging
import sys

from combctl.accumulation import arg_parser as scan_parser
from combctl.config import parse_config
from combctl.errors import CombctlError
from combctl.propagator import arg_parser as propagate_parser
from combctl.pulses import arg_parser as design_parser
from combctl.scenarios import run_scenario

logger = logging.getLogger("combctl")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _common(parser):
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", default=None, help="output directory (default: output.directory of the config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="combctl", description="shaped pulse-train population transfer")
    common = _common(argparse.ArgumentParser(add_help=False))
    subparsers = parser.add_subparsers(dest="command")
    subparsers.add_parser("eigen", parents=[common], help="bound levels, turning points and periods")
    subparsers.add_parser("fc", parents=[common], help="Franck-Condon spectra of the input and target levels")
    design = subparsers.add_parser("design", parents=[common], help="shaped pump and dump spectra")
    design_parser(design)
    propagate = subparsers.add_parser("propagate", parents=[common], help="one pulse pair on the grid")
    propagate_parser(propagate)
    subparsers.add_parser("accumulate", parents=[common], help="the full pulse train")
    scan = subparsers.add_parser("scan", parents=[common], help="train efficiency vs intensity factor")
    scan_parser(scan)
    return parser


def main(argv=None) -> int:
    """entry to CLI"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        config = parse_config(args.config)
        outputs = run_scenario(config, args.command, args.out, args)
    except CombctlError as err:
        logger.debug("aborted", exc_info=True)
        print(f"combctl {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
