"""Signal handling for graceful interruption of long sweeps."""

import asyncio
import logging
import signal
from collections.abc import Callable

__all__ = ["make_stop_on_sigterm"]

logger = logging.getLogger(__name__)


def make_stop_on_sigterm() -> Callable[[], bool]:
    """Create a SIGTERM/SIGINT stop flag for the replication loop.

    Registers handlers that set an asyncio.Event and returns its is_set, which
    the loop polls before scheduling each job. Jobs already finished are kept
    and written out; unfinished ones are reported as failures.

    Must be called from inside a running event loop.

    Returns:
        Callable that returns True once a termination signal was received.
    """
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()

    def handle_signal() -> None:
        """Set the stop event on SIGTERM/SIGINT."""
        logger.info("Termination signal received, finishing in-flight replications...")
        stop.set()

    for sig in (signal.SIGTERM, signal.SIGINT):
        loop.add_signal_handler(sig, handle_signal)

    return stop.is_set
