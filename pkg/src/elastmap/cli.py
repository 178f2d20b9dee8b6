"""Command-line entry point: ``elastmap <subcommand> [--config FILE] [--set k=v ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .adjoint import SetupError
from .config import ConfigError, load_config
from .fem import SolverFailure
from .fieldgen import DegenerateInputError, ImageFormatError
from .materials import DomainError
from .net import FCNN_KINDS
from .pinn import VARIANTS, TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. pinn.iterations=1000 (repeatable)")
    p.add_argument("--paper-scale", action="store_true", help="grid_n=50 and 500000 iterations")
    p.add_argument("--out", type=Path, help="output directory (default: output.directory)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elastmap", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="FE reference data for the configured modulus field")
    _config_args(p)

    p = sub.add_parser("train", help="train one PINN on a reference directory")
    _config_args(p)
    p.add_argument("--reference", type=Path, required=True, help="directory written by generate")

    p = sub.add_parser("sweep", help="variant x FCNN table over k seeds")
    _config_args(p)
    p.add_argument("--variants", default="A,B,C,D")
    p.add_argument("--fcnns", default=",".join(FCNN_KINDS))
    p.add_argument("-k", "--seeds", type=int, default=1, help="seeds 1..k per combination")

    p = sub.add_parser("invert-fea", help="adjoint inverse-FEA baseline")
    _config_args(p)
    p.add_argument("--reference", type=Path, required=True)

    p = sub.add_parser("delentropy", help="delentropy of an image (PGM/PNG) or nodal field CSV")
    p.add_argument("input", type=Path)
    p.add_argument("--histogram", type=Path, help="write occupied histogram bins as CSV")

    p = sub.add_parser("report", help="SVG plots for a run directory")
    p.add_argument("run_dir", type=Path)
    return ap


def _split(text: str, allowed, what: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in allowed]
    if bad or not items:
        raise ConfigError(f"unknown {what}: {', '.join(bad) or '(none)'}")
    return items


def _run(args) -> int:
    if args.command == "delentropy":
        print(f"{pipeline.cmd_delentropy(args.input, args.histogram):.12g}")
        return EXIT_OK
    if args.command == "report":
        for p in pipeline.cmd_report(args.run_dir):
            print(p)
        return EXIT_OK

    cfg = load_config(args.config, args.overrides, args.paper_scale)
    out = args.out or Path(cfg["output"]["directory"])
    if args.command == "generate":
        info = pipeline.cmd_generate(cfg, out)
    elif args.command == "train":
        info = pipeline.cmd_train(cfg, args.reference, out)
    elif args.command == "sweep":
        variants = _split(args.variants, VARIANTS, "variant")
        fcnns = _split(args.fcnns, FCNN_KINDS, "FCNN arrangement")
        if args.seeds < 1:
            raise ConfigError("-k must be >= 1")
        rows = pipeline.cmd_sweep(cfg, out, variants, fcnns, args.seeds)
        info = {"rows": len(rows), "table": str(out / "sweep.csv")}
    else:
        run = pipeline.cmd_invert_fea(cfg, args.reference, out)
        last = run.history[-1]
        info = {"status": run.status, "iterations": len(run.history),
                "strain_error_pct": last["strain_error_pct"], "modulus_error_pct": last["modulus_error_pct"]}
    print(json.dumps(info, sort_keys=True, default=float))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, TrainingDiverged, SetupError, DomainError, DegenerateInputError) as exc:
        step = getattr(exc, "load_step", None)
        extra = f" (load step {step:.6g})" if step is not None else ""
        print(f"solver failure: {exc}{extra}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ImageFormatError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
