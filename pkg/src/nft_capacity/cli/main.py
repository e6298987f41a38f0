"""Command-line entry point: selftest, fig1, fig2, scatter and covariance."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from rich.console import Console

from nft_capacity import __version__
from nft_capacity._version import get_version_info
from nft_capacity.cli.bootstrap import ensure_directories
from nft_capacity.cli.bootstrap import setup_environment
from nft_capacity.cli.bootstrap import setup_logging
from nft_capacity.cli.experiments import EXIT_OK
from nft_capacity.cli.experiments import run_covariance
from nft_capacity.cli.experiments import run_fig1
from nft_capacity.cli.experiments import run_fig2
from nft_capacity.cli.experiments import run_scatter
from nft_capacity.cli.experiments import run_selftest
from nft_capacity.core.settings import VALID_VARIANTS
from nft_capacity.core.settings import Settings
from nft_capacity.error_handling import ConfigError
from nft_capacity.error_handling import NftCapacityError
from nft_capacity.error_handling import exit_code_for
from nft_capacity.error_handling import report_configuration_error
from nft_capacity.error_handling import report_error
from nft_capacity.ui.table_views import TableViewsController

logger = logging.getLogger(__name__)

SUBCOMMANDS = ["selftest", "fig1", "fig2", "scatter", "covariance"]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Flat key = value config file")
    common.add_argument("--seed", type=int, help="Run a single seed")
    common.add_argument("--workers", type=int, help="Worker processes")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument(
        "--variant",
        action="append",
        choices=VALID_VARIANTS,
        help="Covariance variant; repeat to select several",
    )
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        type=str.upper,
        help="Logging level",
    )

    parser = argparse.ArgumentParser(
        prog="nft-capacity",
        description="Nonlinear Fourier scattering and spectral efficiency experiments",
    )
    parser.add_argument("--version", "-v", action="store_true", help="Print version")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    selftest = sub.add_parser("selftest", parents=[common], help="Run invariant suites")
    selftest.add_argument(
        "--fault-inject",
        action="store_true",
        help="Corrupt the integrator step to check that the drift suite fails",
    )
    sub.add_parser("fig1", parents=[common], help="Localization length report")
    sub.add_parser("fig2", parents=[common], help="Spectral efficiency sweeps")
    scatter = sub.add_parser("scatter", parents=[common], help="Scatter a signal file")
    scatter.add_argument("signal_file", type=Path, help="Text or .bin signal file")
    sub.add_parser("covariance", parents=[common], help="Dump noise covariances")
    return parser


def load_settings(args: argparse.Namespace) -> Settings:
    """Config file values overridden by command-line flags."""
    overrides: Dict[str, Any] = {
        "workers": args.workers,
        "output_dir": args.out,
        "log_level": args.log_level,
    }
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.variant:
        overrides["variants"] = args.variant
    return Settings.from_file(args.config, **overrides)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    if argv is None:
        argv = sys.argv[1:]

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else 1

    if args.version:
        info = get_version_info()
        print(f"nft-capacity {__version__}")
        print(
            f"python {info['python_version']}, numpy {info['numpy_version']}, "
            f"scipy {info['scipy_version']} on {info['platform']}"
        )
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return 1

    setup_environment()
    setup_logging(args.log_level or "INFO")
    console = Console(stderr=False)

    try:
        settings = load_settings(args)
    except ConfigError as e:
        report_configuration_error(e, config_file=args.config)
        console.print(f"[red]Configuration error:[/red] {e}")
        return exit_code_for(e)

    setup_logging(settings.log_level, settings.log_file)
    try:
        out_dir = ensure_directories(settings.output_dir)
        return _dispatch(args, settings, out_dir, console)
    except NftCapacityError as e:
        report_error(
            exception=e,
            component="cli",
            context_name="command",
            context_data={"command": args.command},
        )
        console.print(f"[red]{args.command} failed:[/red] {e}")
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return exit_code_for(e)


def _dispatch(
    args: argparse.Namespace, settings: Settings, out_dir: Path, console: Console
) -> int:
    views = TableViewsController(console)

    if args.command == "selftest":
        results = run_selftest(fault_inject=args.fault_inject)
        views.display(views.create_selftest_table([r.as_dict() for r in results]))
        failed = [r.name for r in results if not r.passed]
        if failed:
            console.print(f"[red]Failed suites:[/red] {', '.join(failed)}")
            return 2
        return EXIT_OK

    if args.command == "fig1":
        report = run_fig1(settings, out_dir)
        views.display(views.create_fig1_table(report.rows, report.counts))
        views.display(
            views.create_summary_panel(
                [
                    f"modes: {report.n_modes}",
                    f"skipped modes: {report.skipped_modes}",
                    f"dropped bins: {report.dropped_bins}",
                    f"written: {report.path}",
                ],
                "fig1",
            )
        )
        return EXIT_OK

    if args.command == "fig2":
        results, code = run_fig2(settings, out_dir)
        for distance, points in results.items():
            views.display(views.create_sweep_table(points, f"fig2, {distance:g} km"))
        return code

    if args.command == "scatter":
        state, path = run_scatter(settings, args.signal_file, out_dir)
        views.display(views.create_scatter_table(state))
        views.display(views.create_summary_panel([f"written: {path}"], "scatter"))
        return EXIT_OK

    point, paths = run_covariance(settings, out_dir)
    views.display(views.create_sweep_table([point], "covariance"))
    views.display(
        views.create_summary_panel(
            [f"{name}: {path}" for name, path in paths.items()], "covariance"
        )
    )
    return EXIT_OK
