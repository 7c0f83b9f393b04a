import argparse
import logging
import sys
from typing import List, Optional

from app.config import Config
from app.harness.config_parser import ConfigParser, ConfigValidationError
from app.harness.runner import run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ewm-lab",
        description="Experiments for equivariant exterior wave maps. Outputs go under "
        f"${Config.Output.env_var} (default '{Config.Output.root}').",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    subparsers = parser.add_subparsers(dest="kind", required=True)
    for kind in Config.kinds:
        sub = subparsers.add_parser(kind, help=f"run a {kind} experiment")
        sub.add_argument("--config", help="experiment config file (key = value lines, [section] headers)")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key, e.g. --set grid.npoints=6001")
        sub.add_argument("--output-root", default=None, help=f"overrides ${Config.Output.env_var}")
        keys = ", ".join(p.key for p in Config.params_for_kind(kind) if p.key != "kind")
        sub.epilog = f"keys: {keys}"
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    Config.init_logging(level)

    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as e:
            print(f"Cannot read config file: {e}", file=sys.stderr)
            return EXIT_INVALID

    try:
        config = ConfigParser.parse_config(text, [f"kind={args.kind}"] + args.overrides, output_root=args.output_root)
    except ConfigValidationError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INVALID

    try:
        manifest = run(config, output_root=args.output_root)
    except Exception as e:
        logger.error(f"{args.kind} run failed: {e}")
        print(f"Run failed: {e}", file=sys.stderr)
        return EXIT_FAILED
    print(manifest.model_dump_json(indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
