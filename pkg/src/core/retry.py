"""Retry logic for numerically degenerate random draws."""

import logging
from collections.abc import Callable
from functools import wraps
from typing import TypeVar

from src.core.errors import AttemptsExhaustedError, DegenerateDrawError

__all__ = ["retry", "REDRAWABLE_ERRORS"]

logger = logging.getLogger(__name__)

# Exceptions meaning "this draw is unusable, draw again"
REDRAWABLE_ERRORS: tuple[type[BaseException], ...] = (DegenerateDrawError,)

T = TypeVar("T")


def retry(
    times: int = 20,
    retry_on: tuple[type[BaseException], ...] = REDRAWABLE_ERRORS,
) -> Callable[[Callable[..., T]], Callable[..., T]]:
    """Decorate a random generator so degenerate draws are redrawn.

    The wrapped function must accept an ``attempt`` keyword argument; it is
    called with attempt = 0, 1, ... so each retry can derive a fresh stream.
    Errors outside ``retry_on`` propagate immediately.

    Args:
        times: Number of attempts (1 = no retry).
        retry_on: Exception types that trigger a redraw.

    Returns:
        Decorator function.

    Raises:
        AttemptsExhaustedError: From the wrapper, once every attempt failed.

    Example:
        @retry(times=5)
        def draw(seed: int, *, attempt: int = 0) -> Model:
            ...
    """
    if times < 1:
        raise ValueError(f"times must be at least 1 (got {times})")

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(*args: object, **kwargs: object) -> T:
            last_exc: BaseException | None = None

            for attempt in range(times):
                try:
                    return func(*args, attempt=attempt, **kwargs)
                except retry_on as e:
                    last_exc = e
                    logger.debug(f"{func.__name__}: attempt {attempt} redrawn ({e})")

            raise AttemptsExhaustedError(func.__name__, times) from last_exc

        return wrapper

    return decorator
