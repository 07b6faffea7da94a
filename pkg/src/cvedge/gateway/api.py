"""HTTP/JSON control API with a live metrics stream.

Endpoints (all under /api/v1, JSON bodies, Bearer-token auth except login):

- POST /session                      login -> token
- GET  /topology                     edges, services and sensors visible
- POST /scenarios                    create from Scenario JSON
- POST /scenarios/{id}/start|stop    lifecycle transitions
- GET  /scenarios/{id}               handle state
- GET  /scenarios/{id}/metrics       current report snapshot
- GET  /scenarios/{id}/stream        server-sent events, 1 Hz summaries plus
                                     discrete warning/quarantine events
- GET  /scenarios/{id}/quarantine    retained undelivered envelopes
- GET  /scenarios/{id}/report        export (csv or json)
- GET  /hetnet                       communication-medium metadata snapshot
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from ..harness.engine import Engine, RunResult
from ..harness.metrics import render_csv, render_json
from ..harness.scenario import Scenario, ScenarioError
from ..hetnet import HetNetMonitor
from ..security import AccessManifest, FlowPolicy

logger = logging.getLogger(__name__)

SESSION_TTL_S = 3600


@dataclass
class GatewayConfig:
    users: Dict[str, str] = field(default_factory=dict)
    default_policies: Optional[List[FlowPolicy]] = None
    default_manifests: Optional[List[AccessManifest]] = None


class RunRecord:
    """One created scenario and everything its run produces."""

    def __init__(self, run_id: str, scenario: Scenario, owner: str):
        self.id = run_id
        self.scenario = scenario
        self.owner = owner
        self.state = "Created"
        self.engine: Optional[Engine] = None
        self.result: Optional[RunResult] = None
        self.error: Optional[str] = None
        self.events: List[dict] = []
        self.stop_event = threading.Event()
        self.cond = threading.Condition()
        self.thread: Optional[threading.Thread] = None

    def append_event(self, event: dict) -> None:
        with self.cond:
            self.events.append(event)
            self.cond.notify_all()

    def set_state(self, state: str) -> None:
        with self.cond:
            self.state = state
            self.cond.notify_all()

    def terminal(self) -> bool:
        return self.state in ("Stopped", "Finished")


class Gateway:
    def __init__(self, config: GatewayConfig):
        self.config = config
        self.sessions: Dict[str, dict] = {}
        self.runs: Dict[str, RunRecord] = {}
        self.audit: List[dict] = []
        self._lock = threading.Lock()

    # -- sessions -------------------------------------------------------------

    def login(self, username: str, password: str) -> Optional[dict]:
        if self.config.users.get(username) != password:
            return None
        token = secrets.token_hex(16)
        session = {
            "token": token,
            "subject": username,
            "expires_at_ms": int((time.time() + SESSION_TTL_S) * 1000),
        }
        with self._lock:
            self.sessions[token] = session
        return session

    def authenticate(self, token: Optional[str]) -> str:
        if not token:
            raise HTTPException(status_code=401, detail="missing token")
        with self._lock:
            session = self.sessions.get(token)
        if session is None or session["expires_at_ms"] <= time.time() * 1000:
            raise HTTPException(status_code=401, detail="invalid or expired token")
        return session["subject"]

    def record_audit(self, subject: str, action: str, scenario_id: str) -> None:
        with self._lock:
            self.audit.append(
                {
                    "t_ms": int(time.time() * 1000),
                    "subject": subject,
                    "action": action,
                    "scenario_id": scenario_id,
                }
            )

    # -- scenario lifecycle -----------------------------------------------------

    def create(self, payload: dict, subject: str) -> RunRecord:
        scenario = Scenario.from_dict(payload)
        if scenario.policies is None and self.config.default_policies is not None:
            scenario.policies = list(self.config.default_policies)
        if scenario.manifests is None and self.config.default_manifests is not None:
            scenario.manifests = list(self.config.default_manifests)
        scenario.validate()
        record = RunRecord(uuid.uuid4().hex[:12], scenario, subject)
        with self._lock:
            self.runs[record.id] = record
        self.record_audit(subject, "create", record.id)
        return record

    def start(self, record: RunRecord, subject: str) -> None:
        if record.state != "Created":
            raise HTTPException(status_code=409, detail=f"cannot start from {record.state}")
        record.set_state("Running")
        self.record_audit(subject, "start", record.id)

        def worker() -> None:
            try:
                engine = Engine(
                    record.scenario,
                    console_sink=record.append_event,
                    stop_event=record.stop_event,
                )
                record.engine = engine
                result = engine.run()
                record.result = result
                record.set_state("Stopped" if result.stopped_early else "Finished")
            except Exception as e:  # surfaced through the handle, not lost
                logger.exception("scenario %s failed", record.id)
                record.error = str(e)
                record.set_state("Finished")

        record.thread = threading.Thread(target=worker, daemon=True)
        record.thread.start()

    def stop(self, record: RunRecord, subject: str) -> None:
        if record.state != "Running":
            raise HTTPException(status_code=409, detail=f"cannot stop from {record.state}")
        record.stop_event.set()
        self.record_audit(subject, "stop", record.id)
        if record.thread is not None:
            record.thread.join(timeout=30)

    def get(self, run_id: str) -> RunRecord:
        record = self.runs.get(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown scenario {run_id}")
        return record

    def latest_monitor_snapshot(self) -> dict:
        with self._lock:
            candidates = [r for r in self.runs.values() if r.engine is not None]
        if candidates:
            # runs dict preserves creation order; last engine is the freshest
            return candidates[-1].engine.monitor.metadata().to_dict()
        return HetNetMonitor(lambda: 0).metadata().to_dict()


def create_app(config: Optional[GatewayConfig] = None) -> FastAPI:
    config = config or GatewayConfig(users={"developer": "devpass"})
    gateway = Gateway(config)
    app = FastAPI(title="cvedge gateway", version="0.1.0")
    app.state.gateway = gateway
    # the console is served separately during development
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def auth(request: Request) -> str:
        header = request.headers.get("authorization", "")
        token = header[7:] if header.lower().startswith("bearer ") else None
        return gateway.authenticate(token)

    @app.post("/api/v1/session")
    def login(body: dict) -> JSONResponse:
        credential = body.get("credential", body)
        username = credential.get("username", "") if isinstance(credential, dict) else ""
        password = credential.get("password", "") if isinstance(credential, dict) else ""
        session = gateway.login(username, password)
        if session is None:
            raise HTTPException(status_code=401, detail="bad credential")
        return JSONResponse(session)

    @app.get("/api/v1/topology")
    def topology(subject: str = Depends(auth)) -> dict:
        edges = []
        sensors = []
        for record in gateway.runs.values():
            s = record.scenario
            edges.append(
                {
                    "scenario_id": record.id,
                    "system_edges": 1,
                    "fixed_edges": s.n_fixed,
                    "mobile_edges": s.n_mobile,
                    "state": record.state,
                }
            )
            sensors.extend(
                {"scenario_id": record.id, "kind": "gps", "count": s.n_mobile} for _ in range(1)
            )
        return {
            "edges": edges,
            "services": ["hetnet", "warehouse", "metrics"],
            "sensors": sensors,
        }

    @app.post("/api/v1/scenarios", status_code=201)
    def create_scenario(body: dict, subject: str = Depends(auth)) -> dict:
        try:
            record = gateway.create(body, subject)
        except ScenarioError as e:
            raise HTTPException(status_code=400, detail=str(e).split("; "))
        return {"id": record.id, "state": record.state}

    @app.post("/api/v1/scenarios/{run_id}/start")
    def start_scenario(run_id: str, subject: str = Depends(auth)) -> dict:
        record = gateway.get(run_id)
        gateway.start(record, subject)
        return {"id": record.id, "state": record.state}

    @app.post("/api/v1/scenarios/{run_id}/stop")
    def stop_scenario(run_id: str, subject: str = Depends(auth)) -> dict:
        record = gateway.get(run_id)
        gateway.stop(record, subject)
        return {"id": record.id, "state": record.state}

    @app.get("/api/v1/scenarios/{run_id}")
    def scenario_handle(run_id: str, subject: str = Depends(auth)) -> dict:
        record = gateway.get(run_id)
        return {
            "id": record.id,
            "name": record.scenario.name,
            "state": record.state,
            "error": record.error,
            "links": {
                "metrics": f"/api/v1/scenarios/{record.id}/metrics",
                "stream": f"/api/v1/scenarios/{record.id}/stream",
                "quarantine": f"/api/v1/scenarios/{record.id}/quarantine",
                "report": f"/api/v1/scenarios/{record.id}/report",
            },
        }

    @app.get("/api/v1/scenarios/{run_id}/metrics")
    def metrics(run_id: str, subject: str = Depends(auth)) -> dict:
        record = gateway.get(run_id)
        if record.result is not None:
            return record.result.report.to_dict()
        engine = record.engine
        if engine is None:
            raise HTTPException(status_code=409, detail="scenario has not produced metrics yet")
        report = engine.metrics.build_report(
            scenario_name=record.scenario.name,
            n_mobile=engine.n_mobile,
            n_fixed=record.scenario.n_fixed,
            duration_s=record.scenario.duration_s,
            seed=record.scenario.seed,
            quarantined=engine.security.quarantine.count(),
            dropped=engine.channel.dropped,
            fcw_enabled=record.scenario.apps.fcw,
        )
        return report.to_dict()

    @app.get("/api/v1/scenarios/{run_id}/stream")
    def stream(run_id: str, subject: str = Depends(auth)) -> StreamingResponse:
        record = gateway.get(run_id)

        def event_source():
            idx = 0
            while True:
                with record.cond:
                    while idx >= len(record.events) and not record.terminal():
                        record.cond.wait(timeout=0.25)
                    chunk = record.events[idx:]
                    idx = len(record.events)
                    done = record.terminal() and idx >= len(record.events)
                for event in chunk:
                    yield f"data: {json.dumps(event, sort_keys=True)}\n\n"
                if done:
                    yield f"data: {json.dumps({'type': 'state', 'state': record.state}, sort_keys=True)}\n\n"
                    return

        return StreamingResponse(event_source(), media_type="text/event-stream")

    @app.get("/api/v1/scenarios/{run_id}/quarantine")
    def quarantine(run_id: str, subject: str = Depends(auth)) -> dict:
        record = gateway.get(run_id)
        records: List[dict] = []
        source = record.result.security if record.result is not None else None
        if source is None and record.engine is not None:
            source = record.engine.security
        if source is not None:
            records = [r.to_dict() for r in source.quarantine.records()]
        return {"count": len(records), "records": records}

    @app.get("/api/v1/scenarios/{run_id}/report")
    def report(run_id: str, format: str = "json", subject: str = Depends(auth)):
        record = gateway.get(run_id)
        if not record.terminal() or record.result is None:
            raise HTTPException(status_code=409, detail=f"scenario is {record.state}")
        if format == "csv":
            return PlainTextResponse(render_csv([record.result.report]), media_type="text/csv")
        if format == "json":
            return PlainTextResponse(
                render_json([record.result.report]), media_type="application/json"
            )
        raise HTTPException(status_code=400, detail=f"unsupported format {format!r}")

    @app.get("/api/v1/hetnet")
    def hetnet(subject: str = Depends(auth)) -> dict:
        return gateway.latest_monitor_snapshot()

    @app.get("/api/v1/audit")
    def audit(subject: str = Depends(auth)) -> dict:
        return {"entries": gateway.audit}

    return app


def load_policies_file(path: str) -> List[FlowPolicy]:
    data = json.loads(open(path, encoding="utf-8").read())
    return [FlowPolicy(p["source"], p["sink"]) for p in data]


def load_manifests_file(path: str) -> List[AccessManifest]:
    data = json.loads(open(path, encoding="utf-8").read())
    return [
        AccessManifest(
            subject=m["subject"],
            writable_topics=tuple(m.get("writable_topics", ())),
            readable_topics=tuple(m.get("readable_topics", ())),
            services=tuple(m.get("services", ())),
        )
        for m in data
    ]
