"""Command-line interface.

Subcommands mirror the pipeline stages: simulate, train-forward,
train-inverse, train-baseline, reconstruct, evaluate, sweep. Exit codes:
0 on success, 2 on configuration errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_threads(argv):
    """Set BLAS thread caps before numpy is imported anywhere."""
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            n = argv[idx + 1]
            for var in (
                "OMP_NUM_THREADS",
                "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS",
            ):
                os.environ.setdefault(var, n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfvi",
        description=(
            "Two-stage variational imaging pipeline: learn a multi-fidelity "
            "forward model from scarce paired data, then train a variational "
            "inverse model on unpaired targets."
        ),
    )
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument("--force", action="store_true", help="rerun completed stages")
    parser.add_argument(
        "--threads", type=int, default=0, help="cap BLAS threads (0 = library default)"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("simulate", "generate dataset splits and true-process measurements"),
        ("train-forward", "fit the multi-fidelity forward model"),
        ("train-inverse", "fit the variational inverse model"),
        ("train-baseline", "fit a naive CVAE baseline"),
        ("reconstruct", "export reconstruction grids for the test set"),
        ("evaluate", "compute PSNR / test-ELBO report"),
        ("sweep", "train+evaluate a grid of (method, value, seed) cells"),
        ("run", "run every stage in order"),
    ):
        p = sub.add_parser(name, help=desc)
        if name == "train-baseline":
            p.add_argument("--kind", required=True, help="baseline kind")
        if name == "sweep":
            p.add_argument("--vary", required=True, help="config axis (K, sigma_true, lowfid_scale)")
            p.add_argument("--values", required=True, help="comma-separated values")
            p.add_argument("--methods", default="proposed", help="comma-separated methods")
            p.add_argument("--seeds", default="0", help="comma-separated seeds")
    return parser


def _load_config(args):
    from .config import ExperimentConfig

    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    if args.out is not None:
        overrides["out_dir"] = args.out
    return cfg.replace(**overrides) if overrides else cfg


def _dispatch(args) -> int:
    from . import pipeline
    from .metrics import severity_sweep

    cfg = _load_config(args)
    if args.command == "simulate":
        pipeline.stage_simulate(cfg, force=args.force)
    elif args.command == "train-forward":
        splits = pipeline.stage_simulate(cfg, force=False)
        pipeline.stage_train_forward(cfg, splits, force=args.force)
    elif args.command == "train-inverse":
        splits = pipeline.stage_simulate(cfg, force=False)
        forward = pipeline.stage_train_forward(cfg, splits, force=False)
        pipeline.stage_train_inverse(cfg, splits, forward, force=args.force)
    elif args.command == "train-baseline":
        splits = pipeline.stage_simulate(cfg, force=False)
        pipeline.stage_train_baseline(cfg, splits, args.kind, force=args.force)
    elif args.command in ("reconstruct", "evaluate", "run"):
        out = pipeline.run_pipeline(cfg, force=args.force)
        if args.command == "evaluate":
            print((out / "report" / "metrics.txt").read_text())
    elif args.command == "sweep":
        values = []
        for tok in args.values.split(","):
            tok = tok.strip()
            values.append(float(tok) if "." in tok or "e" in tok else int(tok))
        report = severity_sweep(
            cfg,
            args.vary,
            values,
            [m.strip() for m in args.methods.split(",")],
            [int(s) for s in args.seeds.split(",")],
            cfg.out_dir / "sweep",
            force=args.force,
        )
        (cfg.out_dir / "sweep").mkdir(parents=True, exist_ok=True)
        (cfg.out_dir / "sweep" / "sweep.csv").write_text(report.to_csv())
        print(report.table())
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    args = build_parser().parse_args(argv)

    from .errors import ConfigurationError, InvalidInputError, NumericalError

    try:
        return _dispatch(args)
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
