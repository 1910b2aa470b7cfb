#!/usr/bin/env python3
"""
Cross-Impact Analysis Tool

Reconstructs order books from ITCH-style message files (or a planted synthetic
flow), measures event-time cross-responses between stocks and analyses their
asymmetry, antisymmetric spectra and entropy networks.
"""

import argparse
import logging
import sys

from dotenv import load_dotenv

from config import load_config
from errors import ImpactError
from pipeline_processor import PipelineProcessor
from report_utils import render_text_summary, report_summary
from response_analyzer import CASES

STAGE_COMMANDS = ("ingest", "synth", "respond", "fit", "asym", "spectra", "entropy", "network")


def setup_logging(verbose: bool = False):
    """
    Configure the root logger.

    Args:
        verbose (bool): DEBUG for everything instead of WARNING for library loggers
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per stage plus run-all and report."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="Root seed (overrides config and IMPACT_SEED)")
    common.add_argument("--out", help="Output directory (overrides config and IMPACT_OUTPUT_DIR)")
    common.add_argument("--input", help="Message file or directory of message files")
    common.add_argument(
        "--case",
        action="append",
        choices=CASES,
        help="Averaging case to analyse; repeat for several (default: all five)",
    )
    common.add_argument("--random-L", dest="random_length", type=int, help="Series length L of the random baseline")
    common.add_argument("--workers", type=int, help="Worker processes for per-stock stages")
    common.add_argument("--progress", action="store_true", help="Show progress bars inside long stages")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(
        description="Event-time cross-impact analysis of limit order book data",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in STAGE_COMMANDS:
        subparsers.add_parser(command, parents=[common], help=f"Run the {command} stage")
    subparsers.add_parser("run-all", parents=[common], help="Run every stage in order")
    subparsers.add_parser("report", parents=[common], help="Print the summary tables of a run")
    return parser


def run(argv=None) -> int:
    """
    Parse arguments and execute one command.

    Returns:
        int: Exit code (0 success, 2 validation error, 3 numeric failure)
    """
    # Load environment variables
    load_dotenv()

    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    overrides = {
        "seed": args.seed,
        "output_dir": args.out,
        "input_path": args.input,
        "cases": args.case,
        "random_length": args.random_length,
        "workers": args.workers,
    }

    try:
        config = load_config(args.config, overrides)

        if args.command == "report":
            cases = args.case or (config.cases if args.config else None)
            summary = report_summary(config.output_dir, cases)
            print(render_text_summary(summary))
            return 0

        processor = PipelineProcessor(config, show_progress=args.progress)
        if args.command == "run-all":
            processor.run_all()
        else:
            processor.run_stages([args.command])
    except ImpactError as e:
        print(f"✗ Error: {e}")
        return e.exit_code

    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
