"""Latency, throughput and quartile reporting for scenario runs.

Quartiles use linear interpolation of order statistics (the inclusive
method), so reports are byte-stable across reruns with the same seed.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

SAFETY_THRESHOLD_MS = 200
MOBILITY_THRESHOLD_MS = 1000

CSV_COLUMNS = [
    "scenario",
    "class",
    "n_mobile",
    "n_fixed",
    "samples",
    "min_ms",
    "p25_ms",
    "p50_ms",
    "avg_ms",
    "p75_ms",
    "max_ms",
    "throughput_mbps",
    "warnings",
    "quarantined",
    "dropped",
    "pass",
]

# Latency classes: broker data delivery (mobility budget) and end-to-end
# forward-collision-warning decisions (safety budget).
CLASS_THRESHOLDS = {"delivery": MOBILITY_THRESHOLD_MS, "fcw": SAFETY_THRESHOLD_MS}


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class LatencySample:
    msg_id: str
    sample_class: str
    t_gen_ms: int
    t_done_ms: int

    @property
    def latency_ms(self) -> int:
        return self.t_done_ms - self.t_gen_ms

    def __post_init__(self) -> None:
        if self.t_done_ms < self.t_gen_ms:
            raise MetricsError(
                f"sample {self.msg_id}: done {self.t_done_ms} before generated {self.t_gen_ms}"
            )


def quartiles(values: Sequence[float]) -> Dict[str, float]:
    """p25/p50/p75 by linear interpolation of order statistics."""
    if not values:
        raise MetricsError("cannot summarize an empty sample list")
    s = sorted(values)
    n = len(s)

    def q(p: float) -> float:
        pos = (n - 1) * p
        lo = math.floor(pos)
        frac = pos - lo
        if lo + 1 < n:
            return s[lo] + frac * (s[lo + 1] - s[lo])
        return float(s[lo])

    return {"p25": q(0.25), "p50": q(0.5), "p75": q(0.75)}


@dataclass(frozen=True)
class ClassStats:
    sample_count: int
    min_ms: float
    avg_ms: float
    max_ms: float
    p25_ms: float
    p50_ms: float
    p75_ms: float

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "min_ms": self.min_ms,
            "avg_ms": self.avg_ms,
            "max_ms": self.max_ms,
            "p25_ms": self.p25_ms,
            "p50_ms": self.p50_ms,
            "p75_ms": self.p75_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassStats":
        return cls(
            sample_count=d["sample_count"],
            min_ms=d["min_ms"],
            avg_ms=d["avg_ms"],
            max_ms=d["max_ms"],
            p25_ms=d["p25_ms"],
            p50_ms=d["p50_ms"],
            p75_ms=d["p75_ms"],
        )


EMPTY_STATS = ClassStats(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def summarize(latencies: Sequence[float]) -> ClassStats:
    """Exact min/avg/max plus interpolated quartiles; errors on empty input."""
    if not latencies:
        raise MetricsError("cannot summarize an empty sample list")
    qs = quartiles(latencies)
    return ClassStats(
        sample_count=len(latencies),
        min_ms=float(min(latencies)),
        avg_ms=sum(latencies) / len(latencies),
        max_ms=float(max(latencies)),
        p25_ms=qs["p25"],
        p50_ms=qs["p50"],
        p75_ms=qs["p75"],
    )


def throughput_mbps(payload_bytes: int, duration_s: float) -> float:
    """Delivered payload bits per second, in Mbit/s."""
    if duration_s <= 0:
        raise MetricsError(f"duration must be positive, got {duration_s}")
    return (payload_bytes * 8) / (duration_s * 1e6)


@dataclass
class MetricsReport:
    scenario: str
    n_mobile: int
    n_fixed: int
    duration_s: float
    seed: int
    classes: Dict[str, ClassStats]
    throughput_mbps: float
    warnings_emitted: int
    quarantined: int
    dropped_by_channel: int
    thresholds: Dict[str, int] = field(
        default_factory=lambda: {"safety_ms": SAFETY_THRESHOLD_MS, "mobility_ms": MOBILITY_THRESHOLD_MS}
    )
    pass_flags: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_mobile": self.n_mobile,
            "n_fixed": self.n_fixed,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "classes": {name: stats.to_dict() for name, stats in sorted(self.classes.items())},
            "throughput_mbps": self.throughput_mbps,
            "warnings_emitted": self.warnings_emitted,
            "quarantined": self.quarantined,
            "dropped_by_channel": self.dropped_by_channel,
            "thresholds": self.thresholds,
            "pass_flags": dict(sorted(self.pass_flags.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            scenario=d["scenario"],
            n_mobile=d["n_mobile"],
            n_fixed=d["n_fixed"],
            duration_s=d["duration_s"],
            seed=d["seed"],
            classes={k: ClassStats.from_dict(v) for k, v in d["classes"].items()},
            throughput_mbps=d["throughput_mbps"],
            warnings_emitted=d["warnings_emitted"],
            quarantined=d["quarantined"],
            dropped_by_channel=d["dropped_by_channel"],
            thresholds=d["thresholds"],
            pass_flags=d["pass_flags"],
        )


class MetricsCollector:
    """Accumulates samples and counters while a scenario runs."""

    def __init__(self) -> None:
        self.samples: List[LatencySample] = []
        self.delivered_payload_bytes = 0
        self.warnings_emitted = 0
        self._lock = threading.Lock()

    def record_latency(self, sample_class: str, msg_id: str, t_gen_ms: int, t_done_ms: int) -> None:
        sample = LatencySample(msg_id, sample_class, t_gen_ms, t_done_ms)
        with self._lock:
            self.samples.append(sample)

    def record_delivered(self, payload_bytes: int) -> None:
        with self._lock:
            self.delivered_payload_bytes += payload_bytes

    def record_warning(self) -> None:
        with self._lock:
            self.warnings_emitted += 1

    def latencies(self, sample_class: str) -> List[int]:
        with self._lock:
            return [s.latency_ms for s in self.samples if s.sample_class == sample_class]

    def live_snapshot(self, t_ms: int, duration_s: float, quarantined: int, dropped: int) -> dict:
        """Cumulative point-in-time view for the live metrics stream."""
        with self._lock:
            delivery = [s.latency_ms for s in self.samples if s.sample_class == "delivery"]
            # clamp to the scenario duration so the final event matches the report
            elapsed_s = max(t_ms / 1000.0, 1e-9)
            if duration_s > 0:
                elapsed_s = min(elapsed_s, duration_s)
            return {
                "type": "metrics",
                "t_ms": t_ms,
                "latency_avg_ms": (sum(delivery) / len(delivery)) if delivery else 0.0,
                "latency_max_ms": float(max(delivery)) if delivery else 0.0,
                "throughput_mbps": (self.delivered_payload_bytes * 8) / (elapsed_s * 1e6),
                "warnings": self.warnings_emitted,
                "quarantined": quarantined,
            }

    def build_report(
        self,
        scenario_name: str,
        n_mobile: int,
        n_fixed: int,
        duration_s: float,
        seed: int,
        quarantined: int,
        dropped: int,
        fcw_enabled: bool,
    ) -> MetricsReport:
        classes: Dict[str, ClassStats] = {}
        class_names = ["delivery"] + (["fcw"] if fcw_enabled else [])
        for name in class_names:
            lat = self.latencies(name)
            classes[name] = summarize(lat) if lat else EMPTY_STATS
        for name in {s.sample_class for s in self.samples} - set(class_names):
            classes[name] = summarize(self.latencies(name))
        pass_flags = {
            name: stats.sample_count == 0 or stats.max_ms < CLASS_THRESHOLDS.get(name, MOBILITY_THRESHOLD_MS)
            for name, stats in classes.items()
        }
        return MetricsReport(
            scenario=scenario_name,
            n_mobile=n_mobile,
            n_fixed=n_fixed,
            duration_s=duration_s,
            seed=seed,
            classes=classes,
            throughput_mbps=(
                throughput_mbps(self.delivered_payload_bytes, duration_s) if duration_s > 0 else 0.0
            ),
            warnings_emitted=self.warnings_emitted,
            quarantined=quarantined,
            dropped_by_channel=dropped,
            pass_flags=pass_flags,
        )


def _fmt_ms(x: float) -> str:
    return f"{x:.3f}"


def csv_rows(reports: Sequence[MetricsReport]) -> List[List[str]]:
    rows = []
    for report in reports:
        for name, stats in sorted(report.classes.items()):
            rows.append(
                [
                    report.scenario,
                    name,
                    str(report.n_mobile),
                    str(report.n_fixed),
                    str(stats.sample_count),
                    _fmt_ms(stats.min_ms),
                    _fmt_ms(stats.p25_ms),
                    _fmt_ms(stats.p50_ms),
                    _fmt_ms(stats.avg_ms),
                    _fmt_ms(stats.p75_ms),
                    _fmt_ms(stats.max_ms),
                    f"{report.throughput_mbps:.6f}",
                    str(report.warnings_emitted),
                    str(report.quarantined),
                    str(report.dropped_by_channel),
                    "true" if report.pass_flags.get(name, True) else "false",
                ]
            )
    return rows


def render_csv(reports: Sequence[MetricsReport]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(row) for row in csv_rows(reports))
    return "\n".join(lines) + "\n"


def render_json(reports: Sequence[MetricsReport]) -> str:
    if len(reports) == 1:
        return json.dumps(reports[0].to_dict(), sort_keys=True, indent=2) + "\n"
    return (
        json.dumps({"reports": [r.to_dict() for r in reports]}, sort_keys=True, indent=2) + "\n"
    )


def emit_report(
    reports: Sequence[MetricsReport], fmt: str, path: Path
) -> Path:
    """Write the report file; byte-identical across reruns with the same seed."""
    if fmt == "csv":
        text = render_csv(reports)
    elif fmt == "json":
        text = render_json(reports)
    else:
        raise MetricsError(f"unsupported report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
