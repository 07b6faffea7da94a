"""Vehicle movement traces: CSV parsing, fixed-rate resampling and BSM generation.

The canonical trace format is CSV with the exact header
``time_s,vehicle_id,x_m,y_m,speed_mps,heading_deg``. Comment lines starting
with ``#`` are ignored. Simulator exports in other formats (e.g. SUMO FCD XML)
are expected to be pre-converted to this CSV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List

from .model import Bsm, Position, heading_delta, normalize_heading

TRACE_HEADER = "time_s,vehicle_id,x_m,y_m,speed_mps,heading_deg"

# Deceleration below which the generated brake flag turns on; traces carry no
# brake signal so braking is inferred from the speed profile.
BRAKE_ACCEL_THRESHOLD_MPS2 = -0.5


class TraceError(ValueError):
    """Malformed or inconsistent trace input."""


@dataclass(frozen=True)
class TracePoint:
    t_s: float
    vehicle_id: str
    x_m: float
    y_m: float
    speed_mps: float
    heading_deg: float


@dataclass(frozen=True)
class ScheduleSample:
    """One fixed-rate sample of a vehicle's state."""

    t_ms: int
    x_m: float
    y_m: float
    speed_mps: float
    heading_deg: float
    accel_mps2: float


@dataclass
class BsmSchedule:
    """Per-vehicle fixed-rate samples ready to be turned into BSM streams."""

    rate_hz: float
    samples: Dict[str, List[ScheduleSample]] = field(default_factory=dict)

    def total_samples(self) -> int:
        return sum(len(rows) for rows in self.samples.values())


def parse_trace(text: str, fmt: str = "csv") -> List[TracePoint]:
    """Parse trace CSV into points grouped by vehicle and sorted by time.

    Raises TraceError naming the offending line for malformed rows, negative
    speeds, or non-increasing per-vehicle timestamps.
    """
    if fmt != "csv":
        raise TraceError(f"unsupported trace format {fmt!r}")

    by_vehicle: Dict[str, List[TracePoint]] = {}
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != TRACE_HEADER:
                raise TraceError(f"line {lineno}: expected header {TRACE_HEADER!r}, got {line!r}")
            header_seen = True
            continue
        cols = line.split(",")
        if len(cols) != 6:
            raise TraceError(f"line {lineno}: expected 6 columns, got {len(cols)}")
        try:
            t_s = float(cols[0])
            x_m = float(cols[2])
            y_m = float(cols[3])
            speed = float(cols[4])
            heading = float(cols[5])
        except ValueError:
            raise TraceError(f"line {lineno}: non-numeric field in {line!r}") from None
        vid = cols[1].strip()
        if not vid:
            raise TraceError(f"line {lineno}: empty vehicle_id")
        if speed < 0:
            raise TraceError(f"line {lineno}: negative speed {speed}")
        point = TracePoint(t_s, vid, x_m, y_m, speed, normalize_heading(heading))
        prev = by_vehicle.get(vid)
        if prev and point.t_s <= prev[-1].t_s:
            raise TraceError(
                f"line {lineno}: time {point.t_s} not increasing for vehicle {vid!r} "
                f"(previous {prev[-1].t_s})"
            )
        by_vehicle.setdefault(vid, []).append(point)

    out: List[TracePoint] = []
    for vid in sorted(by_vehicle):
        out.extend(by_vehicle[vid])
    return out


def points_by_vehicle(points: Iterable[TracePoint]) -> Dict[str, List[TracePoint]]:
    grouped: Dict[str, List[TracePoint]] = {}
    for p in points:
        grouped.setdefault(p.vehicle_id, []).append(p)
    for rows in grouped.values():
        rows.sort(key=lambda p: p.t_s)
    return grouped


def interpolate_to_rate(points: List[TracePoint], rate_hz: float) -> List[ScheduleSample]:
    """Resample one vehicle's trace at a fixed rate.

    Samples are placed at t = t_first + k/rate_hz for
    k = 0 .. floor((t_last - t_first) * rate_hz); position and speed are
    linearly interpolated, heading along the shortest arc. A single input
    point yields exactly one sample.
    """
    if rate_hz <= 0:
        raise TraceError(f"rate_hz must be positive, got {rate_hz}")
    if not points:
        raise TraceError("cannot interpolate an empty trace")

    t_first = points[0].t_s
    t_last = points[-1].t_s
    # Guard against float error on exact multiples like 0.3 * 10.
    k_max = math.floor((t_last - t_first) * rate_hz + 1e-9)

    samples: List[ScheduleSample] = []
    seg = 0
    for k in range(k_max + 1):
        t = t_first + k / rate_hz
        while seg + 1 < len(points) and points[seg + 1].t_s < t - 1e-12:
            seg += 1
        a = points[seg]
        b = points[seg + 1] if seg + 1 < len(points) else a
        if b.t_s == a.t_s:
            frac = 0.0
        else:
            frac = min(max((t - a.t_s) / (b.t_s - a.t_s), 0.0), 1.0)
        t_ms = int(round(t * 1000.0))
        if frac == 0.0:
            # exact trace instants reproduce the original point verbatim
            samples.append(ScheduleSample(t_ms, a.x_m, a.y_m, a.speed_mps, a.heading_deg, 0.0))
        elif frac == 1.0:
            samples.append(ScheduleSample(t_ms, b.x_m, b.y_m, b.speed_mps, b.heading_deg, 0.0))
        else:
            samples.append(
                ScheduleSample(
                    t_ms=t_ms,
                    x_m=a.x_m + frac * (b.x_m - a.x_m),
                    y_m=a.y_m + frac * (b.y_m - a.y_m),
                    speed_mps=a.speed_mps + frac * (b.speed_mps - a.speed_mps),
                    heading_deg=normalize_heading(
                        a.heading_deg + frac * heading_delta(a.heading_deg, b.heading_deg)
                    ),
                    accel_mps2=0.0,
                )
            )

    return _with_accel(samples, rate_hz)


def _with_accel(samples: List[ScheduleSample], rate_hz: float) -> List[ScheduleSample]:
    """Backward-difference acceleration from consecutive speeds; first sample 0."""
    out: List[ScheduleSample] = []
    for i, s in enumerate(samples):
        accel = 0.0 if i == 0 else (s.speed_mps - samples[i - 1].speed_mps) * rate_hz
        out.append(
            ScheduleSample(s.t_ms, s.x_m, s.y_m, s.speed_mps, s.heading_deg, accel)
        )
    return out


def build_schedule(points: Iterable[TracePoint], rate_hz: float = 10.0) -> BsmSchedule:
    """Resample a whole trace into a per-vehicle BSM schedule."""
    schedule = BsmSchedule(rate_hz=rate_hz)
    for vid, rows in points_by_vehicle(points).items():
        schedule.samples[vid] = interpolate_to_rate(rows, rate_hz)
    return schedule


def generate_bsms(schedule: BsmSchedule, vehicle_id_prefix: str = "") -> List[Bsm]:
    """Turn a schedule into the per-vehicle BSM streams.

    msg_ids are assigned deterministically as ``<vehicle_id>:<k>`` so identical
    input bytes always produce identical streams.
    """
    out: List[Bsm] = []
    for vid in sorted(schedule.samples):
        full_id = f"{vehicle_id_prefix}{vid}"
        for k, s in enumerate(schedule.samples[vid]):
            out.append(
                Bsm(
                    msg_id=f"{full_id}:{k}",
                    vehicle_id=full_id,
                    t_generated_ms=s.t_ms,
                    pos=Position(s.x_m, s.y_m),
                    speed_mps=s.speed_mps,
                    heading_deg=s.heading_deg,
                    accel_mps2=s.accel_mps2,
                    brake_active=s.accel_mps2 < BRAKE_ACCEL_THRESHOLD_MPS2,
                )
            )
    return out


def synthetic_trace(
    n_vehicles: int,
    t_last_s: float,
    speed_mps: float = 13.4112,
    headway_m: float = 25.0,
    step_s: float = 1.0,
    n_groups: int = 1,
    group_gap_m: float = 100_000.0,
) -> List[TracePoint]:
    """Straight-road synthetic trace: constant-speed vehicles at fixed headway.

    Vehicles are split round-robin-free into ``n_groups`` contiguous groups,
    each group offset along x by ``group_gap_m`` so groups are radio-disjoint.
    Trace points run t = 0 .. t_last_s at ``step_s`` spacing (plus the final
    instant), which the schedule builder then resamples to the broadcast rate.
    """
    if n_vehicles < 0:
        raise TraceError("n_vehicles must be >= 0")
    if t_last_s < 0:
        raise TraceError("t_last_s must be >= 0")
    points: List[TracePoint] = []
    per_group = math.ceil(n_vehicles / n_groups) if n_groups > 0 else n_vehicles
    ticks = [k * step_s for k in range(int(math.floor(t_last_s / step_s + 1e-9)) + 1)]
    if not ticks or ticks[-1] < t_last_s - 1e-9:
        ticks.append(t_last_s)
    for i in range(n_vehicles):
        group = i // per_group if per_group else 0
        local = i % per_group if per_group else i
        x0 = group * group_gap_m - local * headway_m
        vid = f"veh{i:04d}"
        for t in ticks:
            points.append(TracePoint(t, vid, x0 + speed_mps * t, 0.0, speed_mps, 0.0))
    return points
