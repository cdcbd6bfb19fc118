"""Command-line interface.

    epifit <command> --config run.yaml [overrides]

Commands: simulate, fit, select, phase, elicit-ifr, smooth-proportion.
Exit codes: 0 on success, 1 on a failed run, 2 on usage errors.
"""

import argparse
import sys

from .errors import EpiFitError
from .pipeline import COMMANDS, run_pipeline
from .runconfig import RunConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epifit",
        description="Bayesian SEIR/SEIRS epidemic inference from daily deaths")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} stage")
        cmd.add_argument("--config", required=True,
                         help="YAML run configuration")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the configured seed")
        cmd.add_argument("--chains", type=int, default=None,
                         help="override the number of chains")
        cmd.add_argument("--output-dir", default=None,
                         help="override the output directory")
        cmd.add_argument("--model", default=None,
                         help="model variant, e.g. sir, seir.vacc.dem")
        cmd.add_argument("--likelihood", default=None,
                         choices=["negbin", "poisson_exp", "poisson_lognormal"],
                         help="observation model")
        cmd.add_argument("--span", type=float, default=None,
                         help="local-regression span for smooth-proportion")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = RunConfig.from_file(args.config).with_overrides(
            seed=args.seed, chains=args.chains, output_dir=args.output_dir,
            model=args.model, likelihood=args.likelihood, span=args.span)
        artifacts = run_pipeline(rc, args.command)
    except EpiFitError as err:
        print(f"epifit {args.command}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"epifit {args.command}: {err}", file=sys.stderr)
        return 1
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
