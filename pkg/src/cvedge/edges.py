"""Mobile, fixed and system edge runtimes plus the emulated radio channel.

The channel replaces physical radios with a seeded model: one-way latency is
base plus uniform jitter, losses are independent Bernoulli draws, and every
outcome feeds the HetNet monitor. Edge runtimes hold per-edge state and
envelope-handling logic; the scenario engine owns scheduling and drives them
through explicit calls, so a run is a deterministic function of (scenario,
seed) in virtual-clock mode.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .apps import (
    FcwInput,
    FcwParams,
    NEIGHBOR_FRESH_MS,
    TrafficRecord,
    fcw_evaluate,
    find_preceding,
    subapp1_collect,
    subapp2_merge,
)
from .hetnet import HetNetMonitor, Medium
from .model import Bsm, EdgeId, EdgeKind, Envelope, FlowLabel, Position, distance
from .security import (
    CertificateError,
    Enrollment,
    Link,
    SecurityService,
    protect_envelope,
    unprotect_envelope,
)
from .trace import ScheduleSample


class EdgeError(Exception):
    pass


@dataclass(frozen=True)
class MediumModel:
    base_latency_ms: int
    jitter_max_ms: int
    loss_prob: float
    signal_dbm: float = -60.0

    def __post_init__(self) -> None:
        if self.base_latency_ms < 0 or self.jitter_max_ms < 0:
            raise EdgeError("latency parameters must be >= 0")
        if not (0.0 <= self.loss_prob <= 1.0):
            raise EdgeError(f"loss_prob must be in [0,1], got {self.loss_prob}")


def default_network_model() -> Dict[Medium, MediumModel]:
    """Tunable defaults; only the DSRC floor of 2 ms is anchored to field data."""
    return {
        Medium.DSRC: MediumModel(2, 30, 0.01, -65.0),
        Medium.WIFI: MediumModel(10, 40, 0.02, -70.0),
        Medium.LTE: MediumModel(40, 80, 0.02, -75.0),
        Medium.FIBER: MediumModel(1, 2, 0.0, -20.0),
    }


class Channel:
    """Seeded lossy channel; reports every outcome to the HetNet monitor."""

    def __init__(
        self,
        model: Dict[Medium, MediumModel],
        rng: random.Random,
        monitor: Optional[HetNetMonitor] = None,
    ):
        self.model = model
        self._rng = rng
        self._monitor = monitor
        self.dropped = 0

    def transmit(self, medium: Medium, t_send_ms: int) -> Optional[int]:
        """Return the arrival time, or None when the transmission is lost."""
        params = self.model.get(medium)
        if params is None:
            raise EdgeError(f"medium {medium.value} not configured in the network model")
        lost = self._rng.random() < params.loss_prob
        latency = params.base_latency_ms + self._rng.randint(0, params.jitter_max_ms)
        if lost:
            self.dropped += 1
            if self._monitor is not None:
                self._monitor.update_stats(medium, 0.0, delivered=False, signal_dbm=params.signal_dbm)
            return None
        if self._monitor is not None:
            self._monitor.update_stats(medium, float(latency), delivered=True, signal_dbm=params.signal_dbm)
        return t_send_ms + latency


def in_range(a: Position, b: Position, range_m: float) -> bool:
    """Inclusive-boundary range predicate."""
    if range_m < 0:
        raise EdgeError(f"range must be >= 0, got {range_m}")
    return distance(a, b) <= range_m


class SeqAllocator:
    """Per-(producer, topic) strictly increasing sequence numbers."""

    def __init__(self) -> None:
        self._next: Dict[Tuple[str, str], int] = {}

    def next(self, producer: str, topic: str) -> int:
        key = (producer, topic)
        seq = self._next.get(key, 0)
        self._next[key] = seq + 1
        return seq


@dataclass
class NeighborEntry:
    bsm: Bsm
    arrival_ms: int


@dataclass
class FcwWarning:
    follower_id: str
    payload: dict
    t_decision_ms: int
    trigger_msg_id: str
    trigger_t_gen_ms: int


class MobileEdge:
    """Vehicle runtime: broadcasts its schedule, receives neighbors, runs FCW.

    Mobile edges hold no warehouse handle by design.
    """

    def __init__(
        self,
        edge_id: EdgeId,
        vehicle_id: str,
        samples: List[ScheduleSample],
        enrollment: Enrollment,
        security: SecurityService,
        fcw_enabled: bool = False,
        fcw_params: FcwParams = FcwParams(),
    ):
        if edge_id.kind is not EdgeKind.MOBILE:
            raise EdgeError(f"{edge_id} is not a mobile edge id")
        self.edge_id = edge_id
        self.vehicle_id = vehicle_id
        self.samples = samples
        self.enrollment = enrollment
        self.security = security
        self.fcw_enabled = fcw_enabled
        self.fcw_params = fcw_params
        self.neighbors: Dict[str, NeighborEntry] = {}
        self.seq = SeqAllocator()
        self._own_by_tick: Dict[int, Bsm] = {}
        self.broadcasts = 0

    def position_at(self, t_ms: int) -> Position:
        """Piecewise-linear position along the sampled trajectory."""
        s = self.samples
        if t_ms <= s[0].t_ms:
            return Position(s[0].x_m, s[0].y_m)
        if t_ms >= s[-1].t_ms:
            return Position(s[-1].x_m, s[-1].y_m)
        step = (s[-1].t_ms - s[0].t_ms) / (len(s) - 1)
        i = min(int((t_ms - s[0].t_ms) / step), len(s) - 2)
        while s[i + 1].t_ms < t_ms:
            i += 1
        while s[i].t_ms > t_ms:
            i -= 1
        a, b = s[i], s[i + 1]
        frac = (t_ms - a.t_ms) / (b.t_ms - a.t_ms)
        return Position(a.x_m + frac * (b.x_m - a.x_m), a.y_m + frac * (b.y_m - a.y_m))

    def bsm_for_tick(self, k: int) -> Bsm:
        s = self.samples[k]
        bsm = Bsm(
            msg_id=f"{self.vehicle_id}:{k}",
            vehicle_id=self.vehicle_id,
            t_generated_ms=s.t_ms,
            pos=Position(s.x_m, s.y_m),
            speed_mps=s.speed_mps,
            heading_deg=s.heading_deg,
            accel_mps2=s.accel_mps2,
            brake_active=s.accel_mps2 < -0.5,
        )
        if self.fcw_enabled:
            self._own_by_tick[s.t_ms] = bsm
        self.broadcasts += 1
        return bsm

    def broadcast_envelope(self, bsm: Bsm) -> Envelope:
        """Wrap a BSM as a signed, unencrypted V2V envelope."""
        env = Envelope(
            topic="bsm.broadcast",
            producer=self.edge_id.id,
            seq=self.seq.next(self.edge_id.id, "bsm.broadcast"),
            t_generated_ms=bsm.t_generated_ms,
            t_published_ms=-1,
            payload=json.dumps(bsm.to_dict(), sort_keys=True).encode(),
            label=FlowLabel(source=""),
        )
        return protect_envelope(env, Link.V2V, self.enrollment.keys)

    def _own_bsm_at(self, t_gen_ms: int) -> Optional[Bsm]:
        bsm = self._own_by_tick.get(t_gen_ms)
        if bsm is not None:
            return bsm
        older = [t for t in self._own_by_tick if t <= t_gen_ms]
        return self._own_by_tick[max(older)] if older else None

    def on_neighbor_bsm(self, bsm: Bsm, arrival_ms: int, fcw_compute_ms: int) -> Optional[FcwWarning]:
        """Ingest a neighbor's BSM; evaluate FCW against the same-tick own sample."""
        self.neighbors[bsm.vehicle_id] = NeighborEntry(bsm, arrival_ms)
        if not self.fcw_enabled:
            return None
        own = self._own_bsm_at(bsm.t_generated_ms)
        if own is None:
            return None
        fresh = [
            e.bsm
            for e in self.neighbors.values()
            if arrival_ms - e.arrival_ms <= NEIGHBOR_FRESH_MS
        ]
        picked = find_preceding(own, fresh)
        if picked is None:
            return None
        preceding, gap = picked
        t_decision = arrival_ms + fcw_compute_ms
        out = fcw_evaluate(
            FcwInput(v_o_mps=preceding.speed_mps, v_t_mps=own.speed_mps, gap_m=gap),
            self.fcw_params,
            t_decision_ms=t_decision,
        )
        if not out.warn:
            return None
        payload = {
            "follower_pseudonym": self.security.pseudonym(self.vehicle_id),
            "preceding_pseudonym": self.security.pseudonym(preceding.vehicle_id),
            "gap_m": gap,
            "d_w_m": out.d_w_m,
            "t_decision_ms": t_decision,
        }
        return FcwWarning(
            follower_id=self.edge_id.id,
            payload=payload,
            t_decision_ms=t_decision,
            trigger_msg_id=bsm.msg_id,
            trigger_t_gen_ms=bsm.t_generated_ms,
        )

    def warning_envelope(self, warning: FcwWarning) -> Envelope:
        """Warning uplink is an infrastructure leg: signed and encrypted."""
        env = Envelope(
            topic="fcw.warnings",
            producer=self.edge_id.id,
            seq=self.seq.next(self.edge_id.id, "fcw.warnings"),
            t_generated_ms=warning.t_decision_ms,
            t_published_ms=-1,
            payload=json.dumps(warning.payload, sort_keys=True).encode(),
            label=FlowLabel(source=""),
        )
        return protect_envelope(env, Link.V2I, self.enrollment.keys)


class FixedEdge:
    """Roadside runtime: range-filtered collection, verification, scrubbing,
    publication, and the hosted window aggregation sub-app."""

    def __init__(
        self,
        edge_id: EdgeId,
        pos: Position,
        range_m: float,
        enrollment: Enrollment,
        security: SecurityService,
        warehouse,
        window_ms: int = 1000,
        subapp_enrollment: Optional[Enrollment] = None,
    ):
        if edge_id.kind is not EdgeKind.FIXED:
            raise EdgeError(f"{edge_id} is not a fixed edge id")
        if range_m < 0:
            raise EdgeError("range must be >= 0")
        self.edge_id = edge_id
        self.pos = pos
        self.range_m = range_m
        self.enrollment = enrollment
        self.subapp_enrollment = subapp_enrollment or enrollment
        self.security = security
        self.warehouse = warehouse
        self.window_ms = window_ms
        self.raw_topic = f"bsm.raw.{edge_id.id}"
        self.agg_topic = f"traffic.agg.{edge_id.id}"
        self.subapp_id = f"app.sub1.{edge_id.id}"
        self.seq = SeqAllocator()
        self.received = 0
        self.rejected = 0
        self._windows: Dict[int, List[Bsm]] = {}

    def covers(self, position: Position) -> bool:
        return in_range(self.pos, position, self.range_m)

    def on_radio_receive(
        self, env: Envelope, sender_public_key: bytes, arrival_ms: int
    ) -> Optional[Tuple[Envelope, Bsm]]:
        """Verify, scrub and re-wrap a received broadcast for the raw topic.

        Returns the infrastructure-leg envelope to publish plus the scrubbed
        sample, or None when the message failed verification and was
        quarantined.
        """
        self.received += 1
        try:
            clear = unprotect_envelope(env, sender_public_key)
        except CertificateError as e:
            self.rejected += 1
            self.security.record_quarantine(env, self.edge_id.id, e.reason, arrival_ms)
            return None
        scrubbed = self.security.scrub(clear)
        bsm = Bsm.from_dict(json.loads(scrubbed.payload.decode()))
        out = Envelope(
            topic=self.raw_topic,
            producer=self.edge_id.id,
            seq=self.seq.next(self.edge_id.id, self.raw_topic),
            t_generated_ms=env.t_generated_ms,
            t_published_ms=-1,
            payload=scrubbed.payload,
            label=FlowLabel(source=""),
        )
        return protect_envelope(out, Link.V2I, self.enrollment.keys), bsm

    def bsm_row(self, bsm: Bsm, t_ms: int) -> dict:
        row = bsm.to_dict()
        del row["t_generated_ms"]
        row["t_ms"] = t_ms
        row["fixed_edge_id"] = self.edge_id.id
        return row

    def collect(self, bsm: Bsm, t_poll_ms: int) -> None:
        """Assign a consumed sample to the aggregation window being filled."""
        idx = (t_poll_ms - 1) // self.window_ms if t_poll_ms > 0 else 0
        self._windows.setdefault(idx, []).append(bsm)

    def flush_window(self, t1_ms: int) -> TrafficRecord:
        """Close the window ending at t1 and emit its traffic record."""
        idx = (t1_ms - 1) // self.window_ms
        bsms = self._windows.pop(idx, [])
        return subapp1_collect(bsms, (t1_ms - self.window_ms, t1_ms), self.edge_id.id)

    def record_envelope(self, record: TrafficRecord) -> Envelope:
        env = Envelope(
            topic=self.agg_topic,
            producer=self.subapp_id,
            seq=self.seq.next(self.subapp_id, self.agg_topic),
            t_generated_ms=record.t1_ms,
            t_published_ms=-1,
            payload=json.dumps(record.to_dict(), sort_keys=True).encode(),
            label=FlowLabel(source=""),
        )
        return protect_envelope(env, Link.V2I, self.subapp_enrollment.keys)


class SystemEdge:
    """Backend runtime: merges per-edge records and persists to the warehouse."""

    def __init__(
        self,
        edge_id: EdgeId,
        enrollment: Enrollment,
        security: SecurityService,
        warehouse,
        expected_fixed: int,
        window_ms: int = 1000,
    ):
        if edge_id.kind is not EdgeKind.SYSTEM:
            raise EdgeError(f"{edge_id} is not a system edge id")
        self.edge_id = edge_id
        self.enrollment = enrollment
        self.security = security
        self.warehouse = warehouse
        self.expected_fixed = expected_fixed
        self.window_ms = window_ms
        self.subapp_id = "app.sub2.system"
        self.records_consumed = 0
        self.snapshots = 0
        self._pending: Dict[Tuple[int, int], List[TrafficRecord]] = {}

    def on_record(self, record: TrafficRecord) -> None:
        """Buffer a per-edge record and merge its window once complete."""
        self.records_consumed += 1
        key = (record.t0_ms, record.t1_ms)
        bucket = self._pending.setdefault(key, [])
        bucket.append(record)
        self.warehouse.put_rows(
            "traffic_record", [{**record.to_dict(), "t_ms": record.t1_ms}]
        )
        if len(bucket) >= self.expected_fixed:
            self._merge(key)

    def _merge(self, key: Tuple[int, int]) -> None:
        records = self._pending.pop(key)
        snap = subapp2_merge(records, key)
        self.snapshots += 1
        self.warehouse.put_rows(
            "snapshot",
            [
                {
                    "t_ms": snap.t1_ms,
                    "t0_ms": snap.t0_ms,
                    "t1_ms": snap.t1_ms,
                    "edge_count": len(snap.records),
                    "total_vehicle_count": snap.total_vehicle_count,
                    "mean_speed_mps": snap.mean_speed_mps,
                }
            ],
        )

    def flush_partial(self) -> None:
        """Merge any incomplete windows at end of run."""
        for key in sorted(self._pending):
            self._merge(key)
