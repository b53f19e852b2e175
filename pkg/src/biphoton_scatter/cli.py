"""Command-line front end."""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex
from .events import EventError
from .source import SourceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("biphoton_scatter")

# Reference setups whose published widths sit below the strict 4 px bound.
PRESETS = {
    "sweep-scatter": {"strict_sampling": False},
    "sweep-entanglement": {"strict_sampling": False},
    "validate-broadening": {"strict_sampling": False},
}

COMMANDS = {
    "simulate": lambda cfg, out: ex.cmd_simulate(cfg, out),
    "sweep-scatter": lambda cfg, out: ex.cmd_sweep(cfg, out, "strength"),
    "sweep-entanglement": lambda cfg, out: ex.cmd_sweep(cfg, out, "entanglement"),
    "events-synth": ex.cmd_events_synth,
    "events-analyze": ex.cmd_events_analyze,
    "validate-broadening": ex.cmd_validate_broadening,
    "calibrate-screens": ex.cmd_calibrate_screens,
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _bool(text: str) -> bool:
    try:
        return ex._bool(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biphoton-scatter",
                                description="Entangled-photon imaging through dynamic scattering.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI file with [section] key = value settings")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--seed", type=_u64)
        s.add_argument("--workers", type=int)
        s.add_argument("--strict-sampling", type=_bool, dest="strict_sampling")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("seed", "workers", "strict_sampling") if getattr(args, k) is not None}
    try:
        base = ex.replace(ex.RunConfig(), **PRESETS.get(args.command, {}))
        cfg = ex.load_config(args.config, overrides, base)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        COMMANDS[args.command](cfg, args.out)
    except (ex.ConfigError, SourceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, EventError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
