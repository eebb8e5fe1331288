"""
ergolab CLI - transfer operators and equilibrium states of skew products
"""
import argparse
import logging
import sys
from pathlib import Path

from .__version__ import __version__
from .config import EXPERIMENT_KINDS, ExperimentConfig, settings
from .custom_logger import get_logger
from .exceptions import ConfigurationError, ErgolabError, HypothesisViolation
from .experiments import run_experiment

logger = logging.getLogger(__name__)


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser"""
    parser = argparse.ArgumentParser(
        prog="ergolab",
        description="ergolab - transfer operators, equilibrium states and their statistics for skew products",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  ergolab spectrum --config configs/doubling_spectrum.toml
  ergolab decay --config configs/solenoid_decay.toml --workers 4
  ergolab stability --config configs/solenoid_stability.toml --out results/stability
  ergolab run --config configs/solenoid_verify.toml
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML or JSON experiment config")
    common.add_argument("--workers", type=int, help="Worker threads (default: ERGOLAB_WORKERS or 1)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", type=Path, help="Output directory (ERGOLAB_OUT takes precedence)")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    subparsers.add_parser("run", parents=[common], help="Run the experiment kind named in the config")
    for kind in EXPERIMENT_KINDS:
        subparsers.add_parser(kind, parents=[common], help=f"Run the {kind} experiment")
    return parser


def load_config(args) -> ExperimentConfig:
    """Load the config and apply command-line overrides"""
    cfg = ExperimentConfig.load(args.config)
    if args.command == "run" and args.seed is None:
        return cfg
    data = cfg.to_dict()
    if args.command != "run":
        if data["experiment"]["kind"] != args.command:
            logger.info(f"Config declares '{data['experiment']['kind']}'; running '{args.command}'")
        data["experiment"]["kind"] = args.command
    if args.seed is not None:
        data["output"]["seed"] = args.seed
    return ExperimentConfig.from_dict(data)


def output_directory(args, cfg: ExperimentConfig) -> Path:
    if settings.out:
        return Path(settings.out)
    if args.out:
        return args.out
    return Path(cfg.output.directory)


def handle_experiment(args) -> int:
    """Run one experiment and report its pass/fail flags"""
    try:
        cfg = load_config(args)
    except ConfigurationError as e:
        where = f" (line {e.line}, column {e.column})" if e.line is not None else ""
        logger.error(f"Configuration error{where}: {e}")
        return 1

    out_dir = output_directory(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_logger = get_logger("ergolab", log_file=settings.log_file or out_dir / "ergolab.log",
                            level=settings.log_level)
    if args.verbose:
        for handler in run_logger.handlers:
            handler.setLevel(logging.DEBUG)
    workers = args.workers or settings.workers

    try:
        record = run_experiment(cfg, workers=workers, out_dir=out_dir)
    except HypothesisViolation as e:
        print("Hypothesis violations:")
        for violation in e.violations:
            print(f"  - {violation}")
        logger.error(str(e))
        return 2

    print(f"{record.experiment}: {'PASS' if record.passed else 'FAIL'} ({out_dir})")
    for name, ok in sorted(record.flags.items()):
        print(f"  {name:28s} {'ok' if ok else 'FAILED'}")
    return 0 if record.passed else 1


def main() -> int:
    """Main entry point"""
    parser = create_parser()
    args = parser.parse_args()
    settings.setup_logging()

    if args.command is None:
        parser.print_help()
        return 1

    # Configure logging
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return handle_experiment(args)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user")
        return 130
    except ErgolabError as e:
        logger.error(str(e))
        return 1
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
