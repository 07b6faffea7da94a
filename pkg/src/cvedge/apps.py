"""The two reference applications.

Forward collision warning runs on the mobile edge: the follower compares the
gap to the preceding vehicle against a kinematic threshold

    d_w = (v_o - v_t)^2 / (2 * a_moderate) + d

and warns whenever the measured gap falls strictly below d_w.

Traffic data collection is split across layers: sub-app 1 aggregates the
scrubbed vehicle samples each fixed edge collected during a window; sub-app 2
merges the per-edge records into a network-wide snapshot at the system edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .model import Bsm, distance, normalize_heading

# Moderate braking 11 ft/s^2 in SI; vehicle-length offset in meters.
DEFAULT_A_MODERATE_MPS2 = 3.3528
DEFAULT_D_M = 5.0

# Preceding-vehicle selection cone and freshness limit.
BEARING_TOLERANCE_DEG = 15.0
HEADING_TOLERANCE_DEG = 30.0
NEIGHBOR_FRESH_MS = 500


class AppError(Exception):
    pass


@dataclass(frozen=True)
class FcwParams:
    a_moderate_mps2: float = DEFAULT_A_MODERATE_MPS2
    d_m: float = DEFAULT_D_M

    def __post_init__(self) -> None:
        if self.a_moderate_mps2 <= 0:
            raise AppError(f"a_moderate_mps2 must be positive, got {self.a_moderate_mps2}")
        if self.d_m < 0:
            raise AppError(f"d_m must be >= 0, got {self.d_m}")


@dataclass(frozen=True)
class FcwInput:
    v_o_mps: float  # preceding vehicle speed
    v_t_mps: float  # follower/target vehicle speed
    gap_m: float

    def __post_init__(self) -> None:
        if self.v_o_mps < 0 or self.v_t_mps < 0:
            raise AppError("speeds must be >= 0")
        if self.gap_m < 0:
            raise AppError("gap must be >= 0")


@dataclass(frozen=True)
class FcwOutput:
    warn: bool
    d_w_m: float
    t_decision_ms: int


def fcw_threshold(v_o_mps: float, v_t_mps: float, params: FcwParams = FcwParams()) -> float:
    """Collision-warning distance threshold; always >= the vehicle-length offset."""
    dv = v_o_mps - v_t_mps
    return (dv * dv) / (2.0 * params.a_moderate_mps2) + params.d_m


def fcw_evaluate(
    inp: FcwInput, params: FcwParams = FcwParams(), t_decision_ms: int = 0
) -> FcwOutput:
    """Warn when the gap is strictly below the threshold."""
    d_w = fcw_threshold(inp.v_o_mps, inp.v_t_mps, params)
    return FcwOutput(warn=inp.gap_m < d_w, d_w_m=d_w, t_decision_ms=t_decision_ms)


def _angle_diff_deg(a: float, b: float) -> float:
    d = abs(normalize_heading(a) - normalize_heading(b))
    return min(d, 360.0 - d)


def find_preceding(self_bsm: Bsm, neighbors: List[Bsm]) -> Optional[Tuple[Bsm, float]]:
    """Pick the nearest neighbor ahead in the travel cone, with its gap.

    Ahead means the bearing from self to the neighbor lies within +/-15 deg of
    self's heading and the neighbor's heading differs by at most 30 deg. The
    caller filters stale neighbors (older than 500 ms).
    """
    best: Optional[Tuple[Bsm, float]] = None
    for n in neighbors:
        if n.vehicle_id == self_bsm.vehicle_id:
            continue
        gap = distance(self_bsm.pos, n.pos)
        if gap == 0.0:
            continue
        bearing = math.degrees(
            math.atan2(n.pos.y_m - self_bsm.pos.y_m, n.pos.x_m - self_bsm.pos.x_m)
        )
        if _angle_diff_deg(bearing, self_bsm.heading_deg) > BEARING_TOLERANCE_DEG:
            continue
        if _angle_diff_deg(n.heading_deg, self_bsm.heading_deg) > HEADING_TOLERANCE_DEG:
            continue
        if best is None or (gap, n.vehicle_id) < (best[1], best[0].vehicle_id):
            best = (n, gap)
    return best


# ---------------------------------------------------------------------------
# Traffic data collection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrafficRecord:
    fixed_edge_id: str
    t0_ms: int
    t1_ms: int
    vehicle_count: int
    bsm_count: int
    mean_speed_mps: Optional[float]

    def __post_init__(self) -> None:
        if self.t0_ms >= self.t1_ms:
            raise AppError(f"empty window [{self.t0_ms}, {self.t1_ms})")
        if self.vehicle_count > self.bsm_count:
            raise AppError("vehicle_count cannot exceed bsm_count")
        if self.bsm_count == 0 and self.mean_speed_mps is not None:
            raise AppError("mean speed must be absent for an empty window")

    def to_dict(self) -> dict:
        return {
            "fixed_edge_id": self.fixed_edge_id,
            "t0_ms": self.t0_ms,
            "t1_ms": self.t1_ms,
            "vehicle_count": self.vehicle_count,
            "bsm_count": self.bsm_count,
            "mean_speed_mps": self.mean_speed_mps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficRecord":
        return cls(
            fixed_edge_id=d["fixed_edge_id"],
            t0_ms=d["t0_ms"],
            t1_ms=d["t1_ms"],
            vehicle_count=d["vehicle_count"],
            bsm_count=d["bsm_count"],
            mean_speed_mps=d["mean_speed_mps"],
        )


@dataclass(frozen=True)
class NetworkSnapshot:
    t0_ms: int
    t1_ms: int
    records: Tuple[TrafficRecord, ...]
    total_vehicle_count: int
    mean_speed_mps: Optional[float]


def subapp1_collect(window_bsms: List[Bsm], window: Tuple[int, int], edge_id: str) -> TrafficRecord:
    """Aggregate the scrubbed samples one fixed edge collected in a window."""
    t0, t1 = window
    vehicles = {b.vehicle_id for b in window_bsms}
    speeds = [b.speed_mps for b in window_bsms]
    return TrafficRecord(
        fixed_edge_id=edge_id,
        t0_ms=t0,
        t1_ms=t1,
        vehicle_count=len(vehicles),
        bsm_count=len(window_bsms),
        mean_speed_mps=(sum(speeds) / len(speeds)) if speeds else None,
    )


def subapp2_merge(
    records: List[TrafficRecord], window: Optional[Tuple[int, int]] = None
) -> NetworkSnapshot:
    """Merge per-edge records for one window into a network-wide snapshot.

    Vehicle counts sum per edge (a vehicle seen by two edges counts twice);
    the mean speed is weighted by each record's sample count.
    """
    if window is None:
        if not records:
            raise AppError("window required for an empty merge")
        window = (records[0].t0_ms, records[0].t1_ms)
    for r in records:
        if (r.t0_ms, r.t1_ms) != window:
            raise AppError(
                f"window mismatch: record {r.fixed_edge_id} has "
                f"[{r.t0_ms}, {r.t1_ms}), expected {window}"
            )
    total_bsm = sum(r.bsm_count for r in records)
    mean = (
        sum(r.mean_speed_mps * r.bsm_count for r in records if r.bsm_count > 0) / total_bsm
        if total_bsm > 0
        else None
    )
    return NetworkSnapshot(
        t0_ms=window[0],
        t1_ms=window[1],
        records=tuple(records),
        total_vehicle_count=sum(r.vehicle_count for r in records),
        mean_speed_mps=mean,
    )
