"""Metrics port definition (interface and DTO)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

__all__ = ["ReplicationAttemptDto", "MetricsPort"]


@dataclass(slots=True, frozen=True)
class ReplicationAttemptDto:
    """Immutable snapshot of one finished replication job.

    Attributes:
        started_at_sec: Monotonic seconds when the job left the queue.
        finished_at_sec: Monotonic seconds when its result came back.
        is_failed: True if the job raised (solver failure, degenerate draw, ...).
        cell: Short label of the sweep cell the job belongs to.
    """

    started_at_sec: float
    finished_at_sec: float
    is_failed: bool = False
    cell: str = ""


class MetricsPort(Protocol):
    """Interface for recording replication progress.

    The replication loop calls update() after each job; the CLI logs
    __str__() to show progress.
    """

    def update(self, attempt: ReplicationAttemptDto, /) -> None:
        """Record a finished replication job.

        Args:
            attempt: The job to record.
        """
        ...

    def __str__(self) -> str:
        """Return a concise textual summary for humans.

        Returns:
            Formatted metrics string.
        """
        ...
