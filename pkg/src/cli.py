"""Command-line interface: one subcommand per experiment stage."""

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

import pandas as pd

import config
from src import __version__
from src.errors import (
    ConfigError,
    DimensionError,
    DomainError,
    FormatError,
    NumericalError,
    StageError,
    TapeError,
    TrainingError,
    UsageError,
)
from src.evaluation import (
    ExperimentRunner,
    eval_ls,
    generate_data,
    run_ablation,
    run_comparison,
    run_gradient_suite,
    run_scaling,
    train_autoencoders,
    train_trackers,
    write_manifest,
)
from src.settings import load_config

logger = logging.getLogger(__name__)

DATA_ERRORS = (ConfigError, FormatError, DomainError, DimensionError, OSError)
NUMERICAL_ERRORS = (NumericalError, TrainingError, TapeError, ArithmeticError)
HANDLED_ERRORS = (UsageError, StageError) + DATA_ERRORS + NUMERICAL_ERRORS

COMMANDS = {
    "gen-data": "synthesize the channel dataset and the evaluation trajectory",
    "train-ae": "train the autoencoders with and without the distance loss",
    "train-tracker": "train the latent trackers (and the direct baseline)",
    "eval-ls": "minimum-norm LS NMSE over the evaluation trajectory",
    "run-ablation": "latent distance curves of both autoencoders",
    "run-comparison": "NMSE over time for every method",
    "run-scaling": "comparison at two BS array sizes plus parameter counts",
    "grad-check": "finite-difference check of every gradient",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage().strip()}")


def _add_global_flags(parser: argparse.ArgumentParser, default=None):
    parser.add_argument("--config", default=default, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, default=default, help="override every seed in the config")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--epochs", type=int, default=default, help="cap the training epochs of every stage")
    parser.add_argument("-v", "--verbose", action="store_true", default=default or False, help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chantrack", description="Latent channel tracking workbench")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_flags(parser)

    # Global flags are accepted after the subcommand too
    common = _Parser(add_help=False)
    _add_global_flags(common, default=argparse.SUPPRESS)

    subparsers = parser.add_subparsers(dest="command", metavar="command")
    for name, description in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=description, description=description)
    return parser


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, StageError):
        error = error.cause
    if isinstance(error, UsageError):
        return config.EXIT_CODES["usage"]
    if isinstance(error, NUMERICAL_ERRORS):
        return config.EXIT_CODES["numerical"]
    if isinstance(error, DATA_ERRORS):
        return config.EXIT_CODES["data"]
    raise error


def _setup_logging(verbose: bool):
    level = logging.DEBUG if verbose else getattr(logging, str(config.LOG_LEVEL).upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _print_frame(title: str, frame: pd.DataFrame):
    print(f"\n{title}")
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.3f}"))


def _gen_data(runner: ExperimentRunner) -> Dict:
    counts = generate_data(runner)
    print(f"Dataset: {counts['dataset']} samples, trajectory: {counts['trajectory']} steps ({runner.out_dir})")
    return counts


def _train_ae(runner: ExperimentRunner) -> Dict:
    results = train_autoencoders(runner)
    for tag, summary in results.items():
        print(f"Autoencoder {tag}: {_describe(summary)}")
    return results


def _train_tracker(runner: ExperimentRunner) -> Dict:
    results = train_trackers(runner)
    for tag, summary in results.items():
        print(f"Tracker {tag}: {_describe(summary)}")
    return results


def _describe(summary: Dict) -> str:
    if summary.get("reused"):
        return "reused checkpoint"
    return f"{summary['epochs']} epochs, loss {summary['initial_loss']:.4f} -> {summary['best_loss']:.4f}"


def _eval_ls(runner: ExperimentRunner) -> Dict:
    frame = eval_ls(runner)
    mean = float(frame["nmse_ls"].mean())
    print(f"LS mean NMSE: {mean:.3f} dB over {len(frame)} steps")
    return {"mean_nmse_ls": mean}


def _run_ablation(runner: ExperimentRunner) -> Dict:
    _, spearman = run_ablation(runner)
    print(f"Spearman(t, d(t)): without TC {spearman['dist_no_tc']:.3f}, with TC {spearman['dist_tc']:.3f}")
    return {"spearman": spearman}


def _run_comparison(runner: ExperimentRunner) -> Dict:
    report = run_comparison(runner)
    _print_frame("NMSE [dB] by method", report.summary)
    return {"overview": report.overview, "metadata": report.metadata}


def _run_scaling(runner: ExperimentRunner) -> Dict:
    reports = run_scaling(runner)
    results = {}
    for report in reports:
        n_bs = report.metadata["n_bs"]
        _print_frame(f"NMSE [dB] by method, N_B = {n_bs}", report.summary)
        results[f"nb{n_bs}"] = report.overview
    return results


HANDLERS: Dict[str, Callable[[ExperimentRunner], Dict]] = {
    "gen-data": _gen_data,
    "train-ae": _train_ae,
    "train-tracker": _train_tracker,
    "eval-ls": _eval_ls,
    "run-ablation": _run_ablation,
    "run-comparison": _run_comparison,
    "run-scaling": _run_scaling,
}


def _grad_check(seed: Optional[int], out_dir: Optional[str]) -> int:
    results = run_gradient_suite(seed=seed or 0)
    _print_frame("Gradient checks", results)
    if out_dir:
        write_manifest(out_dir, "grad-check", {"checks": results.to_dict(orient="records")})
    if not results["passed"].all():
        print("Gradient check FAILED", file=sys.stderr)
        return config.EXIT_CODES["numerical"]
    return config.EXIT_CODES["ok"]


def cli(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 on usage errors, 2 on data/config/format errors,
        3 on numerical or training errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"a command is required\n\n{parser.format_usage().strip()}")
        _setup_logging(args.verbose)

        if args.command == "grad-check":
            return _grad_check(args.seed, args.out)
        if not args.config:
            raise UsageError(f"--config is required\n\n{parser.format_usage().strip()}")

        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        runner = ExperimentRunner(cfg, max_epochs=args.epochs)
        results = HANDLERS[args.command](runner)
        write_manifest(runner.out_dir, args.command, results, cfg)
        return config.EXIT_CODES["ok"]
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)
    except HANDLED_ERRORS as e:
        code = exit_code_for(e)
        stage_tag = f"[{e.stage}] " if isinstance(e, StageError) else ""
        cause = e.cause if isinstance(e, StageError) else e
        print(f"error: {stage_tag}{cause}", file=sys.stderr)
        if code != config.EXIT_CODES["usage"]:
            logger.debug("Failure details", exc_info=True)
        return code
