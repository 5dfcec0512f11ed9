"""``trexd train|sample|scan|compare|saliency --spec FILE --out DIR [--seed N]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ContractError, CorruptFileError, DimensionError, UnsupportedOperation, VersionMismatchError
from .experiments import commands
from .experiments.runspec import COMMAND_KINDS, load_runspec

log = logging.getLogger("trexd")

_CONFIG_ERRORS = (ConfigError, ContractError, CorruptFileError, DimensionError, UnsupportedOperation,
                  VersionMismatchError)
_RUNNERS = {
    "train": commands.cmd_train,
    "sample": commands.cmd_sample,
    "scan": commands.cmd_testset_scan,
    "compare": commands.cmd_compare,
    "saliency": commands.cmd_saliency,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trexd", description="Level-set sampling experiments.")
    parser.add_argument("command", choices=sorted(_RUNNERS))
    parser.add_argument("--spec", required=True, type=Path, help="run-config JSON file")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the run config's seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load_runspec(args.spec, args.seed)
        if spec.kind not in COMMAND_KINDS[args.command]:
            print(f"error: kind {spec.kind!r} cannot run under '{args.command}'", file=sys.stderr)
            return commands.EXIT_CONFIG
        result = _RUNNERS[args.command](spec, args.out)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return commands.EXIT_CONFIG
    if args.command == "sample":
        if result == commands.EXIT_SAMPLING:
            print("sampling failure: see summary.csv", file=sys.stderr)
        return result
    return commands.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
