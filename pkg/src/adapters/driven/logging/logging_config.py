"""Console logging setup for the command-line tool."""

import logging

__all__ = ["configure_logs"]

_HANDLER_NAME = "gl-console"


def configure_logs(level: str = "INFO") -> None:
    """Configure console logging.

    Sets up:
    - Root logger at the given level.
    - Third-party loggers (matplotlib, numba, asyncio) at WARNING level.
    - Application loggers (src) at the given level.
    - Format with timestamp, level, module, and line number.

    Calling it again replaces the level but never adds a second handler.

    Args:
        level: Root level name.
    """
    log_format = "%(asctime)s [%(levelname)s] %(name)s:%(lineno)d - %(message)s"
    date_format = "%d/%m/%y %H:%M:%S"

    root = logging.getLogger()
    root.setLevel(level)
    if not any(h.get_name() == _HANDLER_NAME for h in root.handlers):
        handler = logging.StreamHandler()
        handler.set_name(_HANDLER_NAME)
        handler.setFormatter(logging.Formatter(log_format, date_format))
        root.addHandler(handler)

    for name in ("matplotlib", "numba", "asyncio"):
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.getLogger("src").setLevel(level)
