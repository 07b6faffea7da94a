"""Scenario configuration: the JSON-loadable description of one emulation run.

A scenario names its topology (mobile/fixed/system edge counts), the movement
trace (file, inline CSV, or the built-in synthetic straight-road generator),
the network model, application toggles, security policies and manifests, and
the clock mode. Validation happens before any execution so a bad scenario
never produces partial outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..apps import FcwParams
from ..broker import BatchConfig
from ..edges import MediumModel, default_network_model
from ..hetnet import Medium
from ..security import AccessManifest, FlowPolicy
from ..trace import TracePoint, parse_trace, synthetic_trace


class ScenarioError(ValueError):
    """Scenario failed validation; nothing was executed."""


@dataclass(frozen=True)
class FixedEdgePlacement:
    id: str
    x_m: float
    y_m: float
    range_m: float


@dataclass(frozen=True)
class ComputeModel:
    """Modeled computation costs, whole milliseconds on the scenario clock."""

    publish_ms: int = 1
    fcw_ms: int = 2


@dataclass(frozen=True)
class AppConfig:
    fcw: bool = False
    traffic_collection: bool = True
    fcw_params: FcwParams = field(default_factory=FcwParams)


@dataclass(frozen=True)
class FaultConfig:
    """Fault injection for demos and security tests."""

    tamper_prob: float = 0.0


@dataclass
class Scenario:
    name: str
    duration_s: float
    n_mobile: int
    n_fixed: int
    seed: int = 0
    n_system: int = 1
    rate_hz: float = 10.0
    clock: str = "virtual"
    trace: dict = field(default_factory=lambda: {"kind": "synthetic"})
    fixed_edges: Optional[List[FixedEdgePlacement]] = None
    v2v_range_m: float = 300.0
    network: Dict[Medium, MediumModel] = field(default_factory=default_network_model)
    apps: AppConfig = field(default_factory=AppConfig)
    policies: Optional[List[FlowPolicy]] = None
    manifests: Optional[List[AccessManifest]] = None
    batch: BatchConfig = field(default_factory=BatchConfig)
    broker_retention: int = 0  # max entries per topic; 0 = unbounded for the run
    # co-prime with the 100 ms beacon grid so consumer polling is not
    # phase-locked to generation and delivery latencies keep their spread
    poll_interval_ms: int = 73
    window_ms: int = 1000
    compute: ComputeModel = field(default_factory=ComputeModel)
    faults: FaultConfig = field(default_factory=FaultConfig)
    wall_speedup: float = 1.0

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            return cls._from_dict(d)
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"bad scenario config: {e}") from e

    @classmethod
    def _from_dict(cls, d: dict) -> "Scenario":
        network = default_network_model()
        for key, cfg in (d.get("network") or {}).items():
            medium = Medium(key)
            network[medium] = MediumModel(
                base_latency_ms=int(cfg["base_latency_ms"]),
                jitter_max_ms=int(cfg["jitter_max_ms"]),
                loss_prob=float(cfg["loss_prob"]),
                signal_dbm=float(cfg.get("signal_dbm", network[medium].signal_dbm)),
            )
        fixed_edges = None
        if d.get("fixed_edges") not in (None, "auto"):
            fixed_edges = [
                FixedEdgePlacement(
                    id=str(f["id"]),
                    x_m=float(f["x_m"]),
                    y_m=float(f["y_m"]),
                    range_m=float(f["range_m"]),
                )
                for f in d["fixed_edges"]
            ]
        apps_d = d.get("apps") or {}
        fcw_params_d = apps_d.get("fcw_params") or {}
        apps = AppConfig(
            fcw=bool(apps_d.get("fcw", False)),
            traffic_collection=bool(apps_d.get("traffic_collection", True)),
            fcw_params=FcwParams(
                a_moderate_mps2=float(fcw_params_d.get("a_moderate_mps2", 3.3528)),
                d_m=float(fcw_params_d.get("d_m", 5.0)),
            ),
        )
        policies = None
        if d.get("policies") not in (None, "auto"):
            policies = [FlowPolicy(p["source"], p["sink"]) for p in d["policies"]]
        manifests = None
        if d.get("manifests") not in (None, "auto"):
            manifests = [
                AccessManifest(
                    subject=m["subject"],
                    writable_topics=tuple(m.get("writable_topics", ())),
                    readable_topics=tuple(m.get("readable_topics", ())),
                    services=tuple(m.get("services", ())),
                )
                for m in d["manifests"]
            ]
        batch_d = d.get("batch") or {}
        compute_d = d.get("compute") or {}
        faults_d = d.get("faults") or {}
        return cls(
            name=str(d["name"]),
            duration_s=float(d["duration_s"]),
            n_mobile=int(d["n_mobile"]),
            n_fixed=int(d["n_fixed"]),
            seed=int(d.get("seed", 0)),
            n_system=int(d.get("n_system", 1)),
            rate_hz=float(d.get("rate_hz", 10.0)),
            clock=str(d.get("clock", "virtual")),
            trace=dict(d.get("trace") or {"kind": "synthetic"}),
            fixed_edges=fixed_edges,
            v2v_range_m=float(d.get("v2v_range_m", 300.0)),
            network=network,
            apps=apps,
            policies=policies,
            manifests=manifests,
            batch=BatchConfig(
                max_batch=int(batch_d.get("max_batch", 256)),
                linger_ms=int(batch_d.get("linger_ms", 0)),
            ),
            broker_retention=int(d.get("broker_retention", 0)),
            poll_interval_ms=int(d.get("poll_interval_ms", 73)),
            window_ms=int(d.get("window_ms", 1000)),
            compute=ComputeModel(
                publish_ms=int(compute_d.get("publish_ms", 1)),
                fcw_ms=int(compute_d.get("fcw_ms", 2)),
            ),
            faults=FaultConfig(tamper_prob=float(faults_d.get("tamper_prob", 0.0))),
            wall_speedup=float(d.get("wall_speedup", 1.0)),
        )

    @classmethod
    def load(cls, path: Path) -> "Scenario":
        path = Path(path)
        if not path.exists():
            raise ScenarioError(f"scenario file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "duration_s": self.duration_s,
            "n_mobile": self.n_mobile,
            "n_fixed": self.n_fixed,
            "n_system": self.n_system,
            "seed": self.seed,
            "rate_hz": self.rate_hz,
            "clock": self.clock,
            "trace": self.trace,
            "fixed_edges": (
                None
                if self.fixed_edges is None
                else [
                    {"id": f.id, "x_m": f.x_m, "y_m": f.y_m, "range_m": f.range_m}
                    for f in self.fixed_edges
                ]
            ),
            "v2v_range_m": self.v2v_range_m,
            "network": {
                m.value: {
                    "base_latency_ms": p.base_latency_ms,
                    "jitter_max_ms": p.jitter_max_ms,
                    "loss_prob": p.loss_prob,
                    "signal_dbm": p.signal_dbm,
                }
                for m, p in self.network.items()
            },
            "apps": {
                "fcw": self.apps.fcw,
                "traffic_collection": self.apps.traffic_collection,
                "fcw_params": {
                    "a_moderate_mps2": self.apps.fcw_params.a_moderate_mps2,
                    "d_m": self.apps.fcw_params.d_m,
                },
            },
            "policies": (
                None
                if self.policies is None
                else [{"source": p.source_pattern, "sink": p.sink_pattern} for p in self.policies]
            ),
            "batch": {"max_batch": self.batch.max_batch, "linger_ms": self.batch.linger_ms},
            "broker_retention": self.broker_retention,
            "poll_interval_ms": self.poll_interval_ms,
            "window_ms": self.window_ms,
            "compute": {"publish_ms": self.compute.publish_ms, "fcw_ms": self.compute.fcw_ms},
            "faults": {"tamper_prob": self.faults.tamper_prob},
            "wall_speedup": self.wall_speedup,
        }

    # -- validation -----------------------------------------------------------

    def validate(self) -> None:
        problems: List[str] = []
        if not self.name:
            problems.append("name must be non-empty")
        if self.duration_s < 0:
            problems.append("duration_s must be >= 0")
        if self.n_system != 1:
            problems.append("exactly one system edge is supported")
        if self.n_mobile < 0:
            problems.append("n_mobile must be >= 0")
        if self.n_mobile > 0 and self.n_fixed < 1:
            problems.append("n_fixed must be >= 1 when mobiles are present")
        if self.rate_hz <= 0:
            problems.append("rate_hz must be positive")
        if self.clock not in ("virtual", "wall"):
            problems.append(f"clock must be 'virtual' or 'wall', got {self.clock!r}")
        kind = self.trace.get("kind", "synthetic")
        if kind == "file":
            path = self.trace.get("path")
            if not path or not Path(path).exists():
                problems.append(f"trace file not found: {path!r}")
        elif kind == "csv_text":
            if not self.trace.get("text"):
                problems.append("csv_text trace requires non-empty 'text'")
        elif kind != "synthetic":
            problems.append(f"unknown trace kind {kind!r}")
        if self.fixed_edges is not None and len(self.fixed_edges) != self.n_fixed:
            problems.append(
                f"{len(self.fixed_edges)} fixed edge placements for n_fixed={self.n_fixed}"
            )
        if self.poll_interval_ms <= 0:
            problems.append("poll_interval_ms must be positive")
        if self.window_ms <= 0:
            problems.append("window_ms must be positive")
        if self.broker_retention < 0:
            problems.append("broker_retention must be >= 0")
        if self.n_mobile > 0 and Medium.DSRC not in self.network:
            problems.append("network model must configure the dsrc medium for broadcasts")
        if not (0.0 <= self.faults.tamper_prob <= 1.0):
            problems.append("tamper_prob must be in [0,1]")
        if self.v2v_range_m < 0:
            problems.append("v2v_range_m must be >= 0")
        if problems:
            raise ScenarioError("; ".join(problems))

    # -- resolution -----------------------------------------------------------

    def resolve_trace(self) -> List[TracePoint]:
        """Produce the trace points for this scenario's mobile fleet."""
        kind = self.trace.get("kind", "synthetic")
        if kind == "synthetic":
            if self.duration_s <= 0 or self.n_mobile == 0:
                return []
            t_last = max(self.duration_s - 1.0 / self.rate_hz, 0.0)
            return synthetic_trace(
                n_vehicles=self.n_mobile,
                t_last_s=t_last,
                speed_mps=float(self.trace.get("speed_mps", 13.4112)),
                headway_m=float(self.trace.get("headway_m", 25.0)),
                step_s=float(self.trace.get("step_s", 1.0)),
                n_groups=max(self.n_fixed, 1),
                group_gap_m=float(self.trace.get("group_gap_m", 100_000.0)),
            )
        if kind == "file":
            text = Path(self.trace["path"]).read_text(encoding="utf-8")
        else:
            text = self.trace["text"]
        points = parse_trace(text)
        vehicles = sorted({p.vehicle_id for p in points})
        if self.n_mobile > 0:
            if len(vehicles) < self.n_mobile:
                raise ScenarioError(
                    f"trace provides {len(vehicles)} vehicles, scenario needs {self.n_mobile}"
                )
            keep = set(vehicles[: self.n_mobile])
            points = [p for p in points if p.vehicle_id in keep]
        return points

    def effective_n_mobile(self, points: List[TracePoint]) -> int:
        return len({p.vehicle_id for p in points})


def auto_fixed_edges(
    n_fixed: int,
    vehicle_groups: List[List[Tuple[float, float]]],
) -> List[FixedEdgePlacement]:
    """Place one fixed edge per vehicle group, covering the group's whole extent.

    Mirrors the evaluated deployments: the spatial requirement is satisfied by
    construction, every mobile stays inside its fixed edge's radio range.
    """
    placements: List[FixedEdgePlacement] = []
    for g in range(n_fixed):
        pts = vehicle_groups[g] if g < len(vehicle_groups) and vehicle_groups[g] else [(0.0, 0.0)]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        cx = (min(xs) + max(xs)) / 2.0
        cy = (min(ys) + max(ys)) / 2.0
        radius = max(
            math.hypot(x - cx, y - cy) for x, y in ((min(xs), min(ys)), (max(xs), max(ys)))
        )
        placements.append(
            FixedEdgePlacement(id=f"f{g}", x_m=cx, y_m=cy, range_m=radius + 10.0)
        )
    return placements
