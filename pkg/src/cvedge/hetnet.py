"""Heterogeneous-network services: background per-medium statistics and
requirement-driven selection of the best communication medium.

Selection filters available mediums by the application's latency and
reliability requirement and picks the lowest average latency, with a fixed
priority order breaking ties. When nothing qualifies the lowest-latency
medium is still returned, flagged ``requirement_met=False``, so the platform
can keep routing.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, Optional, Tuple

STATS_WINDOW = 256


class HetNetError(Exception):
    pass


class Medium(Enum):
    DSRC = "dsrc"
    WIFI = "wifi"
    LTE = "lte"
    FIBER = "fiber"


# Tie-break order when average latencies are equal (safety radio first).
TIE_BREAK_PRIORITY = (Medium.DSRC, Medium.FIBER, Medium.WIFI, Medium.LTE)


@dataclass(frozen=True)
class MediumStats:
    kind: Medium
    lat_min_ms: float
    lat_avg_ms: float
    lat_max_ms: float
    loss_rate: float
    signal_strength_dbm: float
    available: bool
    sample_count: int


@dataclass(frozen=True)
class AppRequirement:
    max_latency_ms: float
    min_reliability: float = 0.0

    def __post_init__(self) -> None:
        if self.max_latency_ms <= 0:
            raise HetNetError(f"max_latency_ms must be positive, got {self.max_latency_ms}")
        if not (0.0 <= self.min_reliability <= 1.0):
            raise HetNetError(f"min_reliability must be in [0,1], got {self.min_reliability}")


# Requirements of the two reference application classes (safety: 200 ms,
# mobility: 1000 ms end-to-end budgets).
SAFETY_REQUIREMENT = AppRequirement(max_latency_ms=200.0, min_reliability=0.9)
MOBILITY_REQUIREMENT = AppRequirement(max_latency_ms=1000.0, min_reliability=0.9)


@dataclass(frozen=True)
class MetadataSnapshot:
    snapshot_id: int
    t_ms: int
    stats: Tuple[MediumStats, ...]

    def stat_for(self, kind: Medium) -> Optional[MediumStats]:
        for s in self.stats:
            if s.kind is kind:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "snapshot_id": self.snapshot_id,
            "t_ms": self.t_ms,
            "mediums": [
                {
                    "kind": s.kind.value,
                    "lat_min_ms": s.lat_min_ms,
                    "lat_avg_ms": s.lat_avg_ms,
                    "lat_max_ms": s.lat_max_ms,
                    "loss_rate": s.loss_rate,
                    "signal_strength_dbm": s.signal_strength_dbm,
                    "available": s.available,
                    "sample_count": s.sample_count,
                }
                for s in self.stats
            ],
        }


@dataclass(frozen=True)
class SelectionResult:
    medium: Medium
    requirement_met: bool
    snapshot_id: int
    decision_time_ms: float = field(compare=False, default=0.0)


class HetNetMonitor:
    """Sliding-window statistics per medium, safe for a background sampler."""

    def __init__(
        self,
        now_ms: Callable[[], int],
        available: Optional[Dict[Medium, bool]] = None,
        window: int = STATS_WINDOW,
    ):
        self._now_ms = now_ms
        self._window = window
        self._available: Dict[Medium, bool] = {m: True for m in Medium}
        if available:
            self._available.update(available)
        # window entries: (latency_ms or None when lost, signal_dbm)
        self._samples: Dict[Medium, Deque[Tuple[Optional[float], float]]] = {
            m: deque(maxlen=window) for m in Medium
        }
        self._version = 0
        self._last_t_ms = 0
        self._lock = threading.Lock()

    def update_stats(
        self, kind: Medium, latency_sample_ms: float, delivered: bool, signal_dbm: float = -60.0
    ) -> MediumStats:
        """Record one transmission outcome and return the medium's fresh stats."""
        if delivered and latency_sample_ms < 0:
            raise HetNetError(f"negative latency sample {latency_sample_ms}")
        with self._lock:
            self._samples[kind].append((latency_sample_ms if delivered else None, signal_dbm))
            self._version += 1
            self._last_t_ms = self._now_ms()
            return self._stats_for(kind)

    def set_available(self, kind: Medium, available: bool) -> None:
        with self._lock:
            self._available[kind] = available
            self._version += 1

    def _stats_for(self, kind: Medium) -> MediumStats:
        window = self._samples[kind]
        delivered = [lat for lat, _ in window if lat is not None]
        lost = len(window) - len(delivered)
        signal = window[-1][1] if window else -100.0
        if delivered:
            lat_min = min(delivered)
            lat_max = max(delivered)
            lat_avg = sum(delivered) / len(delivered)
        else:
            lat_min = lat_avg = lat_max = 0.0
        return MediumStats(
            kind=kind,
            lat_min_ms=lat_min,
            lat_avg_ms=lat_avg,
            lat_max_ms=lat_max,
            loss_rate=(lost / len(window)) if window else 0.0,
            signal_strength_dbm=signal,
            available=self._available[kind],
            sample_count=len(delivered),
        )

    def metadata(self) -> MetadataSnapshot:
        """Immutable snapshot; equal contents until new samples arrive."""
        with self._lock:
            return MetadataSnapshot(
                snapshot_id=self._version,
                t_ms=self._last_t_ms,
                stats=tuple(self._stats_for(m) for m in Medium),
            )


def select_medium(req: AppRequirement, snap: MetadataSnapshot) -> SelectionResult:
    """Pick the best available medium for the requirement.

    Qualifying mediums (avg latency within budget, reliability at least the
    floor, at least one measured sample) compete on minimum average latency;
    ties resolve by the fixed priority order. With no qualifier the
    lowest-latency available medium is returned with requirement_met=False.
    """
    start = time.perf_counter()
    available = [s for s in snap.stats if s.available]
    if not available:
        raise HetNetError("no available communication medium")

    def rank(stats: MediumStats) -> Tuple[float, int]:
        avg = stats.lat_avg_ms if stats.sample_count > 0 else float("inf")
        return (avg, TIE_BREAK_PRIORITY.index(stats.kind))

    qualifying = [
        s
        for s in available
        if s.sample_count > 0
        and s.lat_avg_ms <= req.max_latency_ms
        and (1.0 - s.loss_rate) >= req.min_reliability
    ]
    pool = qualifying if qualifying else available
    best = min(pool, key=rank)
    return SelectionResult(
        medium=best.kind,
        requirement_met=bool(qualifying),
        snapshot_id=snap.snapshot_id,
        decision_time_ms=(time.perf_counter() - start) * 1000.0,
    )
