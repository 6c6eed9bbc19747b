"""Command-line entry point: ``outside-option <stage> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .estimator import EstimationError
from .pipeline import (
    ConvergenceError,
    DataError,
    ExperimentConfig,
    Run,
    UsageError,
    calibrate,
    fit,
    gen_data,
    load_config,
    run_inference,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3

log = logging.getLogger("outside_option")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads within a stage")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="outside-option", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen-data", parents=[common], help="simulate labelled choice data")
    p = sub.add_parser("fit", parents=[common], help="fit the reward model")
    p.add_argument("--dataset", type=Path, help="training JSONL (default: <out>/train.jsonl)")
    p = sub.add_parser("calibrate", parents=[common], help="find hard prompts and build thresholds")
    p.add_argument("--params", type=Path, help="fit JSON (default: <out>/fit.json)")
    for name, text in (("run", "compare best-of-N with the loop modes"), ("full", "run every stage")):
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "run":
            p.add_argument("--params", type=Path)
            p.add_argument("--schedule", type=Path)
        p.add_argument("--mode", choices=["guardrail", "accelerator", "both"], default=None)
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
        p.add_argument("--traces", action="store_true", help="write per-call JSONL traces")
    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return parser


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    doc = cfg.to_dict()
    if args.seed is not None:
        doc["seed"] = args.seed
        doc["world"]["rng_seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = str(args.out)
    mode = getattr(args, "mode", None)
    if mode:
        doc["inference"]["modes"] = ["guardrail", "accelerator"] if mode == "both" else [mode]
    return ExperimentConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _effective_config(args)
    except UsageError as exc:
        print(f"outside-option: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "show-config":
        print(json.dumps(cfg.to_dict(), indent=2))
        return EXIT_OK

    run = Run(cfg, Path(cfg.output_dir), args.command, threads=args.threads)
    figures = not getattr(args, "no_figures", False)
    traces = getattr(args, "traces", False)
    try:
        run.prepare()
        if args.command == "gen-data":
            gen_data(run)
        elif args.command == "fit":
            fit(run, args.dataset)
        elif args.command == "calibrate":
            calibrate(run, args.params)
        elif args.command == "run":
            run_inference(run, args.params, args.schedule, figures=figures, traces=traces)
        else:
            gen_data(run)
            fit(run)
            calibrate(run)
            run_inference(run, figures=figures, traces=traces)
    except (DataError, EstimationError, OSError) as exc:
        return _fail(run, exc, EXIT_DATA)
    except ConvergenceError as exc:
        return _fail(run, exc, EXIT_CONVERGENCE)
    except UsageError as exc:
        return _fail(run, exc, EXIT_USAGE)
    run.write_manifest()
    print(f"wrote {len(run.files)} files to {run.out}")
    return EXIT_OK


def _fail(run: Run, exc: Exception, code: int) -> int:
    print(f"outside-option: {exc}", file=sys.stderr)
    if run.out.is_dir():
        run.write_manifest(status="failed", error=str(exc))
    return code


if __name__ == "__main__":
    sys.exit(main())
