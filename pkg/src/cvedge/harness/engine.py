"""Deterministic scenario execution.

The engine runs a scenario as an event-ordered simulation: every broadcast,
channel delivery, publish, poll, window flush and probe is a timestamped
event, dispatched in (time, priority, scheduling order). In virtual-clock
mode the run is a pure function of (scenario, seed); in wall-clock mode the
same event stream is paced against real time.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

from ..apps import TrafficRecord
from ..broker import Broker
from ..edges import Channel, FixedEdge, MobileEdge, SystemEdge, in_range
from ..hetnet import (
    HetNetMonitor,
    Medium,
    MetadataSnapshot,
    SAFETY_REQUIREMENT,
    select_medium,
)
from ..model import Bsm, EdgeId, EdgeKind, Envelope, Position, distance
from ..security import (
    AccessManifest,
    CertificateError,
    FlowPolicy,
    Role,
    SecurityService,
    decrypt_payload,
    unprotect_envelope,
)
from ..trace import build_schedule
from ..warehouse import Warehouse
from .metrics import (
    CLASS_THRESHOLDS,
    EMPTY_STATS,
    MOBILITY_THRESHOLD_MS,
    MetricsCollector,
    MetricsReport,
    emit_report,
    summarize,
)
from .scenario import Scenario, ScenarioError, auto_fixed_edges

# Dispatch order for events sharing a timestamp.
P_PROBE = 0
P_BROADCAST = 1
P_DELIVER = 2
P_PUBLISH = 3
P_POLL = 4
P_FLUSH = 5
P_SUMMARY = 8
P_END = 9

WARMUP_PROBES = 8
PROBE_INTERVAL_MS = 500


@dataclass
class RunResult:
    scenario: Scenario
    report: MetricsReport
    collector: MetricsCollector
    security: SecurityService
    warehouse: Warehouse
    console_events: List[dict]
    hetnet_snapshot: MetadataSnapshot
    delivered_payloads: List[bytes] = field(default_factory=list)
    stopped_early: bool = False
    engine: Optional["Engine"] = None


class Engine:
    """Builds the platform for one scenario and runs it to completion."""

    def __init__(
        self,
        scenario: Scenario,
        record_payloads: bool = False,
        console_sink: Optional[Callable[[dict], None]] = None,
        stop_event: Optional[threading.Event] = None,
    ):
        scenario.validate()
        self.scenario = scenario
        self.record_payloads = record_payloads
        self.console_sink = console_sink
        self.stop_event = stop_event
        self._t = 0
        self._heap: List[tuple] = []
        self._counter = 0
        self._build()

    # -- clock ----------------------------------------------------------------

    def now_ms(self) -> int:
        return self._t

    # -- construction ----------------------------------------------------------

    def _build(self) -> None:
        s = self.scenario
        self.duration_ms = int(round(s.duration_s * 1000))
        self.rng = random.Random(s.seed)
        salt = hashlib.sha256(f"{s.seed}:{s.name}".encode()).digest()[:16]

        points = s.resolve_trace()
        self.schedule = build_schedule(points, s.rate_hz) if points else None
        vehicle_ids = sorted(self.schedule.samples) if self.schedule else []
        self.n_mobile = len(vehicle_ids)

        policies = s.policies if s.policies is not None else default_policies()
        manifest_list = (
            s.manifests if s.manifests is not None else default_manifests(self.n_mobile, s.n_fixed)
        )
        self.security = SecurityService(
            self.now_ms,
            policies=policies,
            salt=salt,
            manifests={m.subject: m for m in manifest_list},
        )
        self.broker = Broker(
            self.security,
            self.now_ms,
            retention=s.broker_retention,
            wall_mode=(s.clock == "wall"),
        )
        self.monitor = HetNetMonitor(
            self.now_ms, available={m: (m in s.network) for m in Medium}
        )
        self.channel = Channel(s.network, self.rng, self.monitor)
        self.warehouse = Warehouse()
        self.metrics = MetricsCollector()
        self.console_events: List[dict] = []
        self.delivered_payloads: List[bytes] = []

        # fixed edges, placed automatically unless the scenario pins them
        placements = s.fixed_edges
        if placements is None:
            groups = self._vehicle_groups(vehicle_ids)
            placements = auto_fixed_edges(s.n_fixed, groups)
        self.fixed: List[FixedEdge] = []
        for p in placements:
            enr = self.security.enroll(p.id, Role.FIXED_EDGE, with_channel_key=True)
            subapp_enr = self.security.enroll(
                f"app.sub1.{p.id}", Role.APPLICATION, with_channel_key=True
            )
            edge = FixedEdge(
                EdgeId(EdgeKind.FIXED, p.id),
                pos=Position(p.x_m, p.y_m),
                range_m=p.range_m,
                enrollment=enr,
                security=self.security,
                warehouse=self.warehouse,
                window_ms=s.window_ms,
                subapp_enrollment=subapp_enr,
            )
            self.fixed.append(edge)
            self.broker.create_topic(edge.raw_topic)
            self.broker.create_topic(edge.agg_topic)
        self.broker.create_topic("fcw.warnings")

        self.mobiles: List[MobileEdge] = []
        for i, vid in enumerate(vehicle_ids):
            enr = self.security.enroll(f"m{i}", Role.MOBILE_EDGE, with_channel_key=True)
            self.mobiles.append(
                MobileEdge(
                    EdgeId(EdgeKind.MOBILE, f"m{i}"),
                    vehicle_id=vid,
                    samples=self.schedule.samples[vid],
                    enrollment=enr,
                    security=self.security,
                    fcw_enabled=s.apps.fcw,
                    fcw_params=s.apps.fcw_params,
                )
            )

        sys_enr = self.security.enroll("sys0", Role.SYSTEM_EDGE, with_channel_key=True)
        self.system = SystemEdge(
            EdgeId(EdgeKind.SYSTEM, "sys0"),
            enrollment=sys_enr,
            security=self.security,
            warehouse=self.warehouse,
            expected_fixed=s.n_fixed,
            window_ms=s.window_ms,
        )
        self.sub2_enr = self.security.enroll("app.sub2.system", Role.APPLICATION, with_channel_key=True)

        if s.apps.traffic_collection:
            for edge in self.fixed:
                self.broker.subscribe(
                    edge.subapp_id, [edge.raw_topic], edge.subapp_enrollment.token.value
                )
            self.broker.subscribe(
                "app.sub2.system",
                ["traffic.agg.*", "fcw.warnings"],
                self.sub2_enr.token.value,
            )

        self._schedule_initial_events()

    def _vehicle_groups(self, vehicle_ids: List[str]) -> List[List[Tuple[float, float]]]:
        """Contiguous vehicle groups (sorted-id order), one per fixed edge."""
        s = self.scenario
        n_groups = max(s.n_fixed, 1)
        per_group = -(-len(vehicle_ids) // n_groups) if vehicle_ids else 0
        groups: List[List[Tuple[float, float]]] = [[] for _ in range(n_groups)]
        for i, vid in enumerate(vehicle_ids):
            g = min(i // per_group, n_groups - 1) if per_group else 0
            groups[g].extend(
                (smp.x_m, smp.y_m) for smp in self.schedule.samples[vid]
            )
        return groups

    # -- event plumbing ---------------------------------------------------------

    def _push(self, t_ms: int, prio: int, kind: str, args: tuple) -> None:
        self._counter += 1
        heapq.heappush(self._heap, (t_ms, prio, self._counter, kind, args))

    def _schedule_initial_events(self) -> None:
        s = self.scenario
        max_latency = max(
            (p.base_latency_ms + p.jitter_max_ms for p in s.network.values()), default=0
        )
        tail = max_latency + 2 * s.compute.publish_ms + 2 * s.poll_interval_ms + 10
        if self.duration_ms > 0:
            self.n_windows = -(-(self.duration_ms + tail) // s.window_ms)
            self.t_end = self.n_windows * s.window_ms + s.poll_interval_ms + s.window_ms
        else:
            self.n_windows = 0
            self.t_end = 0

        # background medium probing: warmup burst, then periodic
        for medium in Medium:
            if medium in s.network:
                for _ in range(WARMUP_PROBES):
                    self._probe(medium)
        if self.duration_ms > 0:
            self._push(PROBE_INTERVAL_MS, P_PROBE, "probe", ())

        for m_idx, mobile in enumerate(self.mobiles):
            if mobile.samples and mobile.samples[0].t_ms < self.duration_ms:
                self._push(mobile.samples[0].t_ms, P_BROADCAST, "broadcast", (m_idx, 0))

        if s.apps.traffic_collection and self.t_end > 0:
            for f_idx in range(len(self.fixed)):
                self._push(s.poll_interval_ms, P_POLL, "poll_sub1", (f_idx,))
                self._push(s.window_ms, P_FLUSH, "flush", (f_idx, 1))
            self._push(s.poll_interval_ms, P_POLL, "poll_sub2", ())

        if self.t_end >= 1000:
            self._push(1000, P_SUMMARY, "summary", ())
        self._push(self.t_end, P_END, "end", ())

    # -- handlers --------------------------------------------------------------

    def _probe(self, medium: Medium) -> None:
        params = self.scenario.network[medium]
        lost = self.rng.random() < params.loss_prob
        latency = params.base_latency_ms + self.rng.randint(0, params.jitter_max_ms)
        self.monitor.update_stats(
            medium, float(latency), delivered=not lost, signal_dbm=params.signal_dbm
        )

    def _on_probe(self, args: tuple) -> None:
        for medium in Medium:
            if medium in self.scenario.network:
                self._probe(medium)
        nxt = self._t + PROBE_INTERVAL_MS
        if nxt <= self.duration_ms:
            self._push(nxt, P_PROBE, "probe", ())

    def _on_broadcast(self, args: tuple) -> None:
        m_idx, k = args
        mobile = self.mobiles[m_idx]
        sample = mobile.samples[k]
        bsm = mobile.bsm_for_tick(k)
        env = mobile.broadcast_envelope(bsm)
        pos = bsm.pos

        for f_idx, fixed in enumerate(self.fixed):
            if not fixed.covers(pos):
                continue
            send_env = env
            if self.scenario.faults.tamper_prob > 0 and self.rng.random() < self.scenario.faults.tamper_prob:
                send_env = _corrupt(env)
            arrival = self.channel.transmit(Medium.DSRC, sample.t_ms)
            if arrival is not None:
                self._push(
                    arrival,
                    P_DELIVER,
                    "deliver_fixed",
                    (f_idx, send_env, mobile.enrollment.certificate.public_key),
                )

        if self.scenario.apps.fcw:
            for o_idx, other in enumerate(self.mobiles):
                if o_idx == m_idx or not other.samples:
                    continue
                if not in_range(pos, other.position_at(sample.t_ms), self.scenario.v2v_range_m):
                    continue
                arrival = self.channel.transmit(Medium.DSRC, sample.t_ms)
                if arrival is not None:
                    self._push(
                        arrival,
                        P_DELIVER,
                        "deliver_mobile",
                        (o_idx, env, mobile.enrollment.certificate.public_key),
                    )

        if k + 1 < len(mobile.samples) and mobile.samples[k + 1].t_ms < self.duration_ms:
            self._push(mobile.samples[k + 1].t_ms, P_BROADCAST, "broadcast", (m_idx, k + 1))

    def _on_deliver_fixed(self, args: tuple) -> None:
        f_idx, env, sender_pub = args
        fixed = self.fixed[f_idx]
        result = fixed.on_radio_receive(env, sender_pub, self._t)
        if result is None:
            self._emit_quarantine_event()
            return
        out_env, scrubbed = result
        self._push(
            self._t + self.scenario.compute.publish_ms,
            P_PUBLISH,
            "publish_raw",
            (f_idx, out_env, scrubbed),
        )

    def _on_publish_raw(self, args: tuple) -> None:
        f_idx, env, bsm = args
        fixed = self.fixed[f_idx]
        self.broker.publish(env, fixed.enrollment.token.value)
        self.warehouse.put_rows("bsm", [fixed.bsm_row(bsm, self._t)])

    def _on_deliver_mobile(self, args: tuple) -> None:
        m_idx, env, sender_pub = args
        mobile = self.mobiles[m_idx]
        try:
            clear = unprotect_envelope(env, sender_pub)
        except CertificateError as e:
            self.security.record_quarantine(env, mobile.edge_id.id, e.reason, self._t)
            self._emit_quarantine_event()
            return
        bsm = Bsm.from_dict(json.loads(clear.payload.decode()))
        warning = mobile.on_neighbor_bsm(bsm, self._t, self.scenario.compute.fcw_ms)
        if warning is None:
            return
        self.metrics.record_latency(
            "fcw", warning.trigger_msg_id, warning.trigger_t_gen_ms, warning.t_decision_ms
        )
        self.metrics.record_warning()
        self._emit_console({"type": "fcw_warning", "t_ms": warning.t_decision_ms, **warning.payload})

        # uplink to the nearest fixed edge over the HetNet-selected medium
        if not self.fixed:
            return
        selection = select_medium(SAFETY_REQUIREMENT, self.monitor.metadata())
        mobile_pos = mobile.position_at(self._t)
        f_idx = min(
            range(len(self.fixed)),
            key=lambda i: (distance(self.fixed[i].pos, mobile_pos), i),
        )
        arrival = self.channel.transmit(selection.medium, warning.t_decision_ms)
        if arrival is not None:
            wenv = mobile.warning_envelope(warning)
            self._push(
                arrival + self.scenario.compute.publish_ms,
                P_PUBLISH,
                "publish_warning",
                (wenv, mobile.enrollment.token.value),
            )

    def _on_publish_warning(self, args: tuple) -> None:
        env, token = args
        self.broker.publish(env, token)

    def _on_poll_sub1(self, args: tuple) -> None:
        (f_idx,) = args
        fixed = self.fixed[f_idx]
        before = self.security.quarantine.count()
        batch = self.broker.poll(fixed.subapp_id, self.scenario.batch)
        self._emit_quarantine_events_since(before)
        for env in batch:
            plain = self._decrypt(env)
            bsm = Bsm.from_dict(json.loads(plain.decode()))
            self.metrics.record_latency("delivery", bsm.msg_id, env.t_generated_ms, self._t)
            self.metrics.record_delivered(len(plain))
            fixed.collect(bsm, self._t)
            if self.record_payloads:
                self.delivered_payloads.append(plain)
        nxt = self._t + self.scenario.poll_interval_ms
        if nxt <= self.t_end:
            self._push(nxt, P_POLL, "poll_sub1", (f_idx,))

    def _on_poll_sub2(self, args: tuple) -> None:
        before = self.security.quarantine.count()
        batch = self.broker.poll("app.sub2.system", self.scenario.batch)
        self._emit_quarantine_events_since(before)
        for env in batch:
            plain = self._decrypt(env)
            if env.topic.startswith("traffic.agg."):
                record = TrafficRecord.from_dict(json.loads(plain.decode()))
                self.system.on_record(record)
                msg_id = f"{env.topic}:{env.seq}"
            else:
                msg_id = f"{env.topic}:{env.producer}:{env.seq}"
            self.metrics.record_latency("delivery", msg_id, env.t_generated_ms, self._t)
            self.metrics.record_delivered(len(plain))
            if self.record_payloads:
                self.delivered_payloads.append(plain)
        nxt = self._t + self.scenario.poll_interval_ms
        if nxt <= self.t_end:
            self._push(nxt, P_POLL, "poll_sub2", ())

    def _on_flush(self, args: tuple) -> None:
        f_idx, window_index = args
        fixed = self.fixed[f_idx]
        record = fixed.flush_window(self._t)
        env = fixed.record_envelope(record)
        self._push(
            self._t + self.scenario.compute.publish_ms,
            P_PUBLISH,
            "publish_agg",
            (f_idx, env),
        )
        if window_index + 1 <= self.n_windows:
            self._push(
                self._t + self.scenario.window_ms, P_FLUSH, "flush", (f_idx, window_index + 1)
            )

    def _on_publish_agg(self, args: tuple) -> None:
        f_idx, env = args
        fixed = self.fixed[f_idx]
        self.broker.publish(env, fixed.subapp_enrollment.token.value)

    def _on_summary(self, args: tuple) -> None:
        self._emit_console(self._snapshot_event())
        nxt = self._t + 1000
        if nxt < self.t_end:
            self._push(nxt, P_SUMMARY, "summary", ())

    def _on_end(self, args: tuple) -> None:
        pass  # finalization happens after the loop drains

    _HANDLERS = {
        "probe": _on_probe,
        "broadcast": _on_broadcast,
        "deliver_fixed": _on_deliver_fixed,
        "publish_raw": _on_publish_raw,
        "deliver_mobile": _on_deliver_mobile,
        "publish_warning": _on_publish_warning,
        "poll_sub1": _on_poll_sub1,
        "poll_sub2": _on_poll_sub2,
        "flush": _on_flush,
        "publish_agg": _on_publish_agg,
        "summary": _on_summary,
        "end": _on_end,
    }

    # -- console events ----------------------------------------------------------

    def _snapshot_event(self) -> dict:
        return self.metrics.live_snapshot(
            self._t,
            self.scenario.duration_s,
            quarantined=self.security.quarantine.count(),
            dropped=self.channel.dropped,
        )

    def _emit_console(self, event: dict) -> None:
        self.console_events.append(event)
        if self.console_sink is not None:
            self.console_sink(event)

    def _emit_quarantine_event(self) -> None:
        record = self.security.quarantine.records()[-1]
        self._emit_console({"type": "quarantine_record", **record.to_dict()})

    def _emit_quarantine_events_since(self, before_count: int) -> None:
        records = self.security.quarantine.records()
        for record in records[before_count:]:
            self._emit_console({"type": "quarantine_record", **record.to_dict()})

    def _decrypt(self, env: Envelope) -> bytes:
        return decrypt_payload(env, self.security.channel_key)

    # -- run ---------------------------------------------------------------------

    def run(self) -> RunResult:
        wall = self.scenario.clock == "wall"
        wall_start = time.monotonic()
        stopped = False
        while self._heap:
            if self.stop_event is not None and self.stop_event.is_set():
                stopped = True
                break
            t_ms, prio, _, kind, args = heapq.heappop(self._heap)
            if wall:
                target = wall_start + (t_ms / 1000.0) / max(self.scenario.wall_speedup, 1e-9)
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            self._t = t_ms
            self._HANDLERS[kind](self, args)
        return self._finalize(stopped)

    def _finalize(self, stopped: bool) -> RunResult:
        self.system.flush_partial()
        self.warehouse.put_rows(
            "latency_sample",
            [
                {
                    "msg_id": s.msg_id,
                    "sample_class": s.sample_class,
                    "t_gen_ms": s.t_gen_ms,
                    "t_done_ms": s.t_done_ms,
                    "latency_ms": s.latency_ms,
                    "t_ms": s.t_done_ms,
                }
                for s in self.metrics.samples
            ],
        )
        self.warehouse.put_rows(
            "quarantine", [r.to_dict() for r in self.security.quarantine.records()]
        )
        report = self.metrics.build_report(
            scenario_name=self.scenario.name,
            n_mobile=self.n_mobile,
            n_fixed=self.scenario.n_fixed,
            duration_s=self.scenario.duration_s,
            seed=self.scenario.seed,
            quarantined=self.security.quarantine.count(),
            dropped=self.channel.dropped,
            fcw_enabled=self.scenario.apps.fcw,
        )
        final_event = self._snapshot_event()
        final_event["final"] = True
        self._emit_console(final_event)
        return RunResult(
            scenario=self.scenario,
            report=report,
            collector=self.metrics,
            security=self.security,
            warehouse=self.warehouse,
            console_events=self.console_events,
            hetnet_snapshot=self.monitor.metadata(),
            delivered_payloads=self.delivered_payloads,
            stopped_early=stopped,
            engine=self,
        )


def _corrupt(env: Envelope) -> Envelope:
    if not env.payload:
        return env
    tampered = env.payload[:-1] + bytes([env.payload[-1] ^ 0xFF])
    return replace(env, payload=tampered)


def default_policies() -> List[FlowPolicy]:
    return [
        FlowPolicy("bsm.raw.*", "app.sub1.*"),
        FlowPolicy("traffic.agg.*", "app.sub2.*"),
        FlowPolicy("fcw.warnings", "app.sub2.*"),
    ]


def default_manifests(n_mobile: int, n_fixed: int) -> List[AccessManifest]:
    manifests: List[AccessManifest] = []
    for i in range(n_mobile):
        manifests.append(
            AccessManifest(
                subject=f"m{i}", writable_topics=("fcw.warnings",), services=("hetnet",)
            )
        )
    for g in range(n_fixed):
        fid = f"f{g}"
        manifests.append(
            AccessManifest(
                subject=fid,
                writable_topics=(f"bsm.raw.{fid}",),
                services=("hetnet", "warehouse"),
            )
        )
        manifests.append(
            AccessManifest(
                subject=f"app.sub1.{fid}",
                writable_topics=(f"traffic.agg.{fid}",),
                readable_topics=(f"bsm.raw.{fid}",),
                services=("warehouse",),
            )
        )
    manifests.append(
        AccessManifest(
            subject="app.sub2.system",
            readable_topics=("traffic.agg.*", "fcw.warnings"),
            services=("warehouse", "metrics"),
        )
    )
    return manifests


def run_scenario(
    scenario: Scenario,
    out_dir: Optional[Path] = None,
    formats: Sequence[str] = ("csv", "json"),
    record_payloads: bool = False,
    console_sink: Optional[Callable[[dict], None]] = None,
    stop_event: Optional[threading.Event] = None,
) -> RunResult:
    """Validate, execute, and (optionally) write report plus warehouse outputs."""
    engine = Engine(
        scenario,
        record_payloads=record_payloads,
        console_sink=console_sink,
        stop_event=stop_event,
    )
    result = engine.run()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            emit_report([result.report], fmt, out / f"report.{fmt}")
        result.warehouse.persist(out)
    return result


def pool_reports(name: str, results: List[RunResult]) -> MetricsReport:
    """Pool several same-shape runs (different seeds) into one report row."""
    if not results:
        raise ScenarioError("nothing to pool")
    first = results[0]
    classes = {}
    names = set()
    for r in results:
        names.update(r.report.classes)
    for cls_name in sorted(names):
        latencies: List[int] = []
        for r in results:
            latencies.extend(r.collector.latencies(cls_name))
        classes[cls_name] = summarize(latencies) if latencies else EMPTY_STATS
    total_bytes = sum(r.collector.delivered_payload_bytes for r in results)
    duration_total = sum(r.scenario.duration_s for r in results)
    pass_flags = {
        n: st.sample_count == 0 or st.max_ms < CLASS_THRESHOLDS.get(n, MOBILITY_THRESHOLD_MS)
        for n, st in classes.items()
    }
    return MetricsReport(
        scenario=name,
        n_mobile=first.report.n_mobile,
        n_fixed=first.report.n_fixed,
        duration_s=first.scenario.duration_s,
        seed=first.scenario.seed,
        classes=classes,
        throughput_mbps=(total_bytes * 8) / (duration_total * 1e6) if duration_total > 0 else 0.0,
        warnings_emitted=sum(r.report.warnings_emitted for r in results),
        quarantined=sum(r.report.quarantined for r in results),
        dropped_by_channel=sum(r.report.dropped_by_channel for r in results),
        pass_flags=pass_flags,
    )


def run_sweep(
    template: Scenario,
    mobile_counts: Sequence[int],
    n_fixed: int = 1,
    seeds: int = 4,
    out_dir: Optional[Path] = None,
) -> Tuple[List[MetricsReport], List[MetricsReport]]:
    """Run the scalability sweep: one pooled report row per mobile count.

    Each point runs ``seeds`` times with consecutive seeds; the pooled rows
    land in sweep.csv, the individual runs in runs.csv.
    """
    from dataclasses import replace

    pooled: List[MetricsReport] = []
    individual: List[MetricsReport] = []
    for count in mobile_counts:
        results = []
        for k in range(seeds):
            scenario = replace(
                template,
                name=f"{template.name}-m{count}",
                n_mobile=count,
                n_fixed=n_fixed,
                seed=template.seed + k,
            )
            results.append(run_scenario(scenario))
        pooled.append(pool_reports(f"{template.name}-m{count}", results))
        individual.extend(r.report for r in results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        emit_report(pooled, "csv", out / "sweep.csv")
        emit_report(individual, "csv", out / "runs.csv")
        emit_report(pooled, "json", out / "sweep.json")
    return pooled, individual
