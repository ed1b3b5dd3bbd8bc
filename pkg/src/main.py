"""Application entrypoint."""

import asyncio
import logging
import sys
from collections.abc import Sequence

from src.adapters.driven.config.settings import load_settings
from src.adapters.driven.logging.logging_config import configure_logs
from src.adapters.driving.cli import build_parser, dispatch
from src.adapters.driving.signals import make_stop_on_sigterm
from src.core.errors import GroupLassoError

__all__ = ["main", "run"]

logger = logging.getLogger(__name__)

EXIT_FAILURE = 2


async def main(argv: Sequence[str] | None = None) -> int:
    """Run one ``gl`` subcommand.

    Startup sequence:
    1. Parse arguments.
    2. Configure logging.
    3. Load and validate configuration.
    4. Dispatch the subcommand (sweeps stop early on SIGTERM/SIGINT).

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:]).

    Returns:
        Exit status: 0 on success, 2 on configuration or numerical errors.
    """
    args = build_parser().parse_args(argv)
    configure_logs()

    try:
        settings = load_settings(args.env_file)
    except (RuntimeError, ValueError) as exc:
        logger.error(
            f"Configuration error: {exc}\n"
            "Hint: check the GL_* environment variables (e.g. GL_KKT_TOL, GL_MAX_WORKERS) "
            "and that the --env-file exists."
        )
        return EXIT_FAILURE

    configure_logs(settings.log_level)
    stop_fn = make_stop_on_sigterm() if args.command in ("experiment", "classify") else (lambda: False)

    try:
        return await dispatch(args, settings, stop_fn=stop_fn)
    except GroupLassoError as exc:
        logger.error(f"{args.command} failed: {exc}")
        for note in getattr(exc, "__notes__", []):
            logger.error(note)
        return EXIT_FAILURE
    except (RuntimeError, ValueError) as exc:
        logger.error(f"{args.command} failed: {exc}\nHint: check the input files and option values.")
        return EXIT_FAILURE


def run() -> None:
    """Console script entry point."""
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Shutdown requested by user (Ctrl+C).")
        sys.exit(130)


if __name__ == "__main__":
    run()
