"""In-memory sliding-window metrics for replication jobs."""

from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass

from src.ports.metrics import MetricsPort, ReplicationAttemptDto

__all__ = ["ReplicationMetrics"]


@dataclass(slots=True, frozen=True)
class _Sample:
    """Internal record for one replication job."""

    duration_ms: float
    failed: bool
    cell: str


class ReplicationMetrics(MetricsPort):
    """Lock-free progress metrics for the replication loop.

    Tracks:
    - Average job duration.
    - Failure rate (solver errors, degenerate draws, cancellations).
    - Cell of the most recent job.
    - Total jobs seen.

    Only updated from the event loop thread; not thread-safe.
    """

    def __init__(self, *, window_size: int = 100) -> None:
        """Initialize metrics collector.

        Args:
            window_size: Number of recent jobs to keep for statistics.
        """
        if window_size < 1:
            raise ValueError(f"window_size must be positive (got {window_size})")
        self._window: deque[_Sample] = deque(maxlen=window_size)
        self._total_seen: int = 0

    def update(self, attempt: ReplicationAttemptDto) -> None:
        """Record a finished replication job.

        Args:
            attempt: Job timing and result.
        """
        duration_ms = max(0.0, attempt.finished_at_sec - attempt.started_at_sec) * 1_000.0
        self._window.append(_Sample(duration_ms=duration_ms, failed=attempt.is_failed, cell=attempt.cell))
        self._total_seen += 1

    @property
    def total(self) -> int:
        return self._total_seen

    def __str__(self) -> str:
        """Return human-readable one-line summary for logging.

        Returns:
            Formatted metrics string.
        """
        if not self._window:
            return "Metrics: waiting for data …"

        n_window = len(self._window)
        failures = sum(1 for s in self._window if s.failed)
        fail_pct = (failures / n_window) * 100
        avg_ms = statistics.fmean(s.duration_ms for s in self._window)
        last = self._window[-1]

        return (
            f"job={avg_ms:8.1f} ms | "
            f"cell={last.cell or '-'} | "
            f"fail={fail_pct:5.1f}% | "
            f"win={n_window}/{self._window.maxlen} | "
            f"total={self._total_seen}"
        )
