"""Command-line entry point: ``otfs-sbl <nmse|ber|converge|success> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ALGORITHMS, default_config, load_config
from .experiments import emit_manifest, run_experiment, write_csv

log = logging.getLogger("otfs_sbl")

SUBCOMMANDS = {
    "nmse": "nmse_sweep",
    "ber": "ber_sweep",
    "converge": "convergence",
    "success": "success_rate",
}


def _algos(text):
    algos = tuple(a.strip() for a in text.split(",") if a.strip())
    bad = set(algos) - set(ALGORITHMS)
    if not algos or bad:
        raise argparse.ArgumentTypeError(
            f"expected a comma list drawn from {','.join(ALGORITHMS)}")
    return algos


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="otfs-sbl",
        description="Monte-Carlo experiments for OTFS delay-Doppler channel estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config file (defaults if omitted)")
        p.add_argument("--seed", type=_seed, help="base seed (u64)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--scale", choices=("desk", "paper"), default=None,
                       help="numerology preset when no config file is given")
        p.add_argument("--algos", type=_algos, help="comma list, e.g. sbl,ifsblt")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    kind = SUBCOMMANDS[args.command]
    try:
        if args.config:
            cfg = load_config(args.config)
            if cfg.experiment != kind:
                cfg = cfg.replace(experiment=kind)
            if args.scale:
                log.warning("--scale is ignored when --config is given")
        else:
            cfg = default_config(kind, args.scale or "desk")
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.out:
            changes["out_dir"] = args.out
        if args.algos:
            changes["algorithms"] = args.algos
        if args.trials is not None:
            changes["trials"] = args.trials
        if changes:
            cfg = cfg.replace(**changes)
    except (OSError, ValueError) as exc:
        print(f"otfs-sbl: {exc}", file=sys.stderr)
        return 2

    log.info("running %s with %d trials", kind, cfg.trials)
    result = run_experiment(cfg)
    try:
        csv_path = write_csv(result, cfg.out_dir)
        manifest = emit_manifest(cfg, result, cfg.out_dir, csv_path)
    except OSError as exc:
        print(f"otfs-sbl: cannot write results: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {csv_path} and {manifest}")
    if result.failures:
        print(f"{result.failures} solver runs failed", file=sys.stderr)
    if result.fatal_cells:
        print(f"fatal cells: {', '.join(result.fatal_cells)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
