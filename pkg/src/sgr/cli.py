"""Command line entry point: ``sgr sweep`` and ``sgr ablate-b``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import load_config, run_b_ablation, run_experiment


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgr", description="Segmentation-guided volume bounds for undersampled MRI.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("sweep", "acceleration sweep over SGR and RR"), ("ablate-b", "SGR over several clip factors b")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML config or a run_manifest.yaml from an earlier run")
        p.add_argument("--seed", type=_u64, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--emit-images", action="store_true", default=None, help="write image grids")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging and per-step guidance logs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    overrides = dict(seed=args.seed, out=args.out, jobs=args.jobs, emit_images=args.emit_images)
    if args.verbose:
        overrides["step_logs"] = True
    cfg = load_config(args.config, **overrides)
    run = run_experiment if args.command == "sweep" else run_b_ablation
    result = run(cfg)
    logging.getLogger("sgr").info(
        "%s: %d records, %d/%d cells failed, outputs in %s",
        args.command, len(result.records), len(result.failed_cells), result.n_cells, result.out_dir,
    )
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
