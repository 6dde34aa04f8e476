"""Command line interface: ``stokes-lod <experiment> [options]``.

Exit codes: 0 on success, 2 for usage errors (bad flags, missing or
malformed configuration, inconsistent levels), 1 for numerical failures.
"""
import argparse
import logging
import sys

from .exceptions import DomainError, ResourceError, SingularSystemError, SolverAccuracyError
from .harness import EXPERIMENTS, build_config, parse_ells, parse_levels, read_config_file, run


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {text}")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _list(parser):
    def parse(text):
        try:
            return parser(text)
        except DomainError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--seed", type=_u64, help="coefficient seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=_positive,
                        help="worker threads (default: $STOKES_LOD_THREADS or all cores)")
    common.add_argument("--coarse", type=_list(parse_levels),
                        help="coarse levels k (H = 2^-k), comma separated")
    common.add_argument("--fine", type=int, help="fine level (h = 2^-k)")
    common.add_argument("--eps", type=int, help="coefficient level (eps = 2^-k)")
    common.add_argument("--ell", type=_list(parse_ells),
                        help="patch orders, comma separated; 'global' for whole-domain patches")
    common.add_argument("--timings", action="store_true", default=None,
                        help="record wall times in the seconds column")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(prog="stokes-lod",
                                     description="Multiscale Stokes experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    helps = {
        "decay": "decay of prototypical basis functions",
        "localization": "localization error of the basis",
        "convergence": "errors against the fine reference",
        "solve": "single solve with exported solution",
    }
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_settings = read_config_file(args.config) if args.config else {}
    except FileNotFoundError:
        print(f"stokes-lod: error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"stokes-lod: error: {exc}", file=sys.stderr)
        return 2
    overrides = {k: getattr(args, k) for k in
                 ("seed", "out", "threads", "coarse", "fine", "eps", "ell", "timings")}
    try:
        cfg = build_config(args.experiment, file_settings, overrides)
    except (DomainError, TypeError) as exc:
        print(f"stokes-lod: error: {exc}", file=sys.stderr)
        return 2
    try:
        run(cfg)
    except (DomainError, ResourceError) as exc:
        print(f"stokes-lod: error: {exc}", file=sys.stderr)
        return 2
    except (SingularSystemError, SolverAccuracyError) as exc:
        print(f"stokes-lod: numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
