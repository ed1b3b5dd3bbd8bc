"""Tests for the replication job scheduler."""

import asyncio
import threading
import time
from collections.abc import Callable
from unittest.mock import MagicMock

import pytest

from src.core.replication_loop import run_replications
from src.ports.metrics import ReplicationAttemptDto

__all__ = []


def make_n_shot_stop(n: int) -> Callable[[], bool]:
    """Create stop function that returns True after N calls.

    Args:
        n: Number of calls before returning True.

    Returns:
        Stop function.
    """
    counter = 0

    def stop() -> bool:
        nonlocal counter
        counter += 1
        return counter > n

    return stop


def never_stop() -> bool:
    return False


def square_job(value: int, delay: float = 0.0) -> Callable[[], int]:
    def job() -> int:
        if delay:
            time.sleep(delay)
        return value * value

    return job


@pytest.mark.asyncio
async def test_outcomes_follow_job_order() -> None:
    """Outcomes are indexed by job position, not completion order."""
    jobs = [square_job(v, delay=0.05 * (5 - v)) for v in range(5)]

    outcomes = await run_replications(jobs, never_stop, max_workers=5)

    assert [o.index for o in outcomes] == list(range(5))
    assert [o.value for o in outcomes] == [0, 1, 4, 9, 16]
    assert all(o.ok for o in outcomes)


@pytest.mark.asyncio
async def test_failed_job_is_reported_not_raised() -> None:
    """A raising job becomes a failed outcome; the others still run."""

    def boom() -> int:
        raise ValueError("degenerate draw")

    outcomes = await run_replications([square_job(2), boom, square_job(3)], never_stop, max_workers=2)

    assert outcomes[0].value == 4
    assert not outcomes[1].ok
    assert isinstance(outcomes[1].error, ValueError)
    assert outcomes[2].value == 9


@pytest.mark.asyncio
async def test_worker_count_bounds_concurrency() -> None:
    """No more than max_workers jobs run at once."""
    lock = threading.Lock()
    running = 0
    peak = 0

    def job() -> int:
        nonlocal running, peak
        with lock:
            running += 1
            peak = max(peak, running)
        time.sleep(0.02)
        with lock:
            running -= 1
        return 0

    await run_replications([job] * 12, never_stop, max_workers=3)

    assert 1 <= peak <= 3


@pytest.mark.asyncio
async def test_stop_before_start_cancels_everything() -> None:
    """If stop is requested immediately, no job runs and all are cancelled."""
    calls = MagicMock(return_value=1)

    outcomes = await run_replications([calls] * 4, lambda: True, max_workers=2)

    calls.assert_not_called()
    assert all(isinstance(o.error, asyncio.CancelledError) for o in outcomes)


@pytest.mark.asyncio
async def test_stop_midway_keeps_finished_results() -> None:
    """Jobs finished before the stop keep their values."""
    jobs = [square_job(v) for v in range(50)]

    outcomes = await run_replications(jobs, make_n_shot_stop(3), max_workers=1)

    assert len(outcomes) == 50
    finished = [o for o in outcomes if o.ok]
    assert finished
    assert all(o.value == o.index**2 for o in finished)
    assert any(isinstance(o.error, asyncio.CancelledError) for o in outcomes)


@pytest.mark.asyncio
async def test_metrics_receive_one_update_per_job() -> None:
    """The metrics port is updated with labels and failure flags."""
    metrics = MagicMock()

    def boom() -> int:
        raise RuntimeError("solver failed")

    await run_replications(
        [square_job(1), boom], never_stop, max_workers=1, metrics=metrics, labels=["n=10", "n=20"]
    )

    assert metrics.update.call_count == 2
    dtos = [call.args[0] for call in metrics.update.call_args_list]
    assert all(isinstance(d, ReplicationAttemptDto) for d in dtos)
    assert {d.cell for d in dtos} == {"n=10", "n=20"}
    assert [d.is_failed for d in sorted(dtos, key=lambda d: d.cell)] == [False, True]
    assert all(d.finished_at_sec >= d.started_at_sec for d in dtos)


@pytest.mark.asyncio
async def test_rejects_zero_workers() -> None:
    """max_workers must be positive."""
    with pytest.raises(ValueError):
        await run_replications([square_job(1)], never_stop, max_workers=0)


@pytest.mark.asyncio
async def test_empty_job_list() -> None:
    """No jobs means no outcomes."""
    assert await run_replications([], never_stop) == []
