// Typed client for the gateway HTTP/JSON API. The console performs no
// computation on metrics beyond display; every number shown comes from one of
// these payloads.

import { readSseStream, SseEvent } from "./sse.js";

export interface Session {
  token: string;
  subject: string;
  expires_at_ms: number;
}

export interface ScenarioHandle {
  id: string;
  name?: string;
  state: string;
  error?: string | null;
}

export interface Topology {
  edges: Array<{
    scenario_id: string;
    system_edges: number;
    fixed_edges: number;
    mobile_edges: number;
    state: string;
  }>;
  services: string[];
  sensors: Array<{ scenario_id: string; kind: string; count: number }>;
}

export interface MetricsEvent {
  type: "metrics";
  t_ms: number;
  latency_avg_ms: number;
  latency_max_ms: number;
  throughput_mbps: number;
  warnings: number;
  quarantined: number;
  final?: boolean;
}

export interface WarningEvent {
  type: "fcw_warning";
  t_ms: number;
  follower_pseudonym: string;
  preceding_pseudonym: string;
  gap_m: number;
  d_w_m: number;
}

export interface QuarantineEvent {
  type: "quarantine_record";
  topic: string;
  producer: string;
  seq: number;
  consumer: string;
  reason: string;
  t_ms: number;
}

export interface StateEvent {
  type: "state";
  state: string;
}

export type StreamEvent = MetricsEvent | WarningEvent | QuarantineEvent | StateEvent;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`gateway error ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ApiClient {
  private token: string | null = null;

  constructor(public readonly baseUrl: string) {}

  get authenticated(): boolean {
    return this.token !== null;
  }

  setToken(token: string | null): void {
    this.token = token;
  }

  private headers(): Record<string, string> {
    const h: Record<string, string> = { "content-type": "application/json" };
    if (this.token) h["authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail: unknown = resp.statusText;
      try {
        detail = ((await resp.json()) as { detail?: unknown }).detail;
      } catch {
        // non-JSON error body
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async login(username: string, password: string): Promise<Session> {
    const session = await this.request<Session>("POST", "/api/v1/session", {
      username,
      password,
    });
    this.token = session.token;
    return session;
  }

  topology(): Promise<Topology> {
    return this.request<Topology>("GET", "/api/v1/topology");
  }

  createScenario(scenario: Record<string, unknown>): Promise<ScenarioHandle> {
    return this.request<ScenarioHandle>("POST", "/api/v1/scenarios", scenario);
  }

  start(id: string): Promise<ScenarioHandle> {
    return this.request<ScenarioHandle>("POST", `/api/v1/scenarios/${id}/start`);
  }

  stop(id: string): Promise<ScenarioHandle> {
    return this.request<ScenarioHandle>("POST", `/api/v1/scenarios/${id}/stop`);
  }

  handle(id: string): Promise<ScenarioHandle> {
    return this.request<ScenarioHandle>("GET", `/api/v1/scenarios/${id}`);
  }

  metrics(id: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/api/v1/scenarios/${id}/metrics`);
  }

  quarantine(id: string): Promise<{ count: number; records: QuarantineEvent[] }> {
    return this.request("GET", `/api/v1/scenarios/${id}/quarantine`);
  }

  hetnet(): Promise<Record<string, unknown>> {
    return this.request("GET", "/api/v1/hetnet");
  }

  /** Export the run report exactly as the gateway serves it. */
  async exportReport(id: string, format: "csv" | "json"): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/api/v1/scenarios/${id}/report?format=${format}`, {
      headers: this.headers(),
    });
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return await resp.text();
  }

  /**
   * Follow the scenario's event stream until it closes (scenario terminal).
   * Events are delivered in order; the final event is {type: "state"}.
   */
  async stream(
    id: string,
    onEvent: (event: StreamEvent) => void,
    signal?: AbortSignal,
  ): Promise<void> {
    const resp = await fetch(`${this.baseUrl}/api/v1/scenarios/${id}/stream`, {
      headers: this.headers(),
      signal,
    });
    if (!resp.ok || resp.body === null) {
      throw new ApiError(resp.status, "stream unavailable");
    }
    await readSseStream(
      resp.body,
      (event: SseEvent) => onEvent(JSON.parse(event.data) as StreamEvent),
      signal,
    );
  }
}
