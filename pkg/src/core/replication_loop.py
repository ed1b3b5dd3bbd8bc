"""Event loop that runs independent replication jobs on a worker pool."""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Generic, TypeVar

from src.ports.metrics import MetricsPort, ReplicationAttemptDto

__all__ = ["JobOutcome", "run_replications", "get_now_time"]

logger = logging.getLogger(__name__)

T = TypeVar("T")

LOG_EVERY = 50


def get_now_time() -> float:
    """Get current monotonic time in seconds.

    Returns:
        Current time in seconds (event loop's monotonic clock).
    """
    return asyncio.get_running_loop().time()


@dataclass(slots=True, frozen=True)
class JobOutcome(Generic[T]):
    """Result of one job: either a value or the exception it raised.

    Attributes:
        index: Position of the job in the submitted sequence.
        value: Return value (None on failure).
        error: Exception raised by the job, or CancelledError if it never ran.
    """

    index: int
    value: T | None
    error: BaseException | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


async def run_replications(
    jobs: Sequence[Callable[[], T]],
    stop_fn: Callable[[], bool],
    *,
    max_workers: int = 4,
    metrics: MetricsPort | None = None,
    labels: Sequence[str] | None = None,
) -> list[JobOutcome[T]]:
    """Run blocking jobs on a thread pool and collect their outcomes.

    At most ``max_workers`` jobs are in flight. Once stop_fn() returns True no
    new job is scheduled, in-flight jobs are cancelled and every job that did
    not finish is reported with a CancelledError.

    Args:
        jobs: Zero-argument callables; each must draw from its own random stream.
        stop_fn: Callable that returns True when the run should stop.
        max_workers: Thread pool size.
        metrics: Optional progress recorder, updated after every job.
        labels: Optional cell label per job, forwarded to the metrics.

    Returns:
        One outcome per job, ordered by job index regardless of completion order.
    """
    if max_workers < 1:
        raise ValueError(f"max_workers must be at least 1 (got {max_workers})")
    loop = asyncio.get_running_loop()
    outcomes: dict[int, JobOutcome[T]] = {}
    pending: dict[asyncio.Future[T], tuple[int, float]] = {}
    next_job = 0

    def _record(index: int, started: float, value: T | None, error: BaseException | None) -> None:
        outcomes[index] = JobOutcome(index=index, value=value, error=error)
        if metrics is not None:
            metrics.update(
                ReplicationAttemptDto(
                    started_at_sec=started,
                    finished_at_sec=get_now_time(),
                    is_failed=error is not None,
                    cell=labels[index] if labels is not None else "",
                )
            )
            if len(outcomes) % LOG_EVERY == 0:
                logger.info(f"{len(outcomes)}/{len(jobs)} jobs | {metrics}")

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        try:
            while not stop_fn() and (next_job < len(jobs) or pending):
                while next_job < len(jobs) and len(pending) < max_workers and not stop_fn():
                    future = loop.run_in_executor(pool, jobs[next_job])
                    pending[future] = (next_job, get_now_time())
                    next_job += 1
                if not pending:
                    break

                done, _ = await asyncio.wait(pending, timeout=0.5, return_when=asyncio.FIRST_COMPLETED)
                for future in done:
                    index, started = pending.pop(future)
                    try:
                        _record(index, started, future.result(), None)
                    except Exception as e:  # noqa: BLE001
                        logger.debug(f"job {index} failed: {e}")
                        _record(index, started, None, e)
        finally:
            if pending:
                logger.info(f"Shutdown requested, cancelling {len(pending)} in-flight jobs.")
                for future in pending:
                    future.cancel()
                await asyncio.gather(*pending, return_exceptions=True)

    for index in range(len(jobs)):
        if index not in outcomes:
            outcomes[index] = JobOutcome(index=index, value=None, error=asyncio.CancelledError())
    return [outcomes[i] for i in range(len(jobs))]
