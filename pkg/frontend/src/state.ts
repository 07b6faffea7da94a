// Console state: session, scenario lifecycle and the live chart window.
// Chart state stores received event values verbatim; rendering never smooths
// or recomputes them, so what the developer sees is what the gateway sent.

import { MetricsEvent, QuarantineEvent, StreamEvent, WarningEvent } from "./api.js";

export const SAFETY_THRESHOLD_MS = 200;
export const MOBILITY_THRESHOLD_MS = 1000;
export const DEFAULT_WINDOW_S = 120;

export interface ConsoleSession {
  token: string;
  subject: string;
  serverUrl: string;
}

export type ScenarioState = "Created" | "Running" | "Stopped" | "Finished";

const TRANSITIONS: Record<ScenarioState, ScenarioState[]> = {
  Created: ["Running"],
  Running: ["Stopped", "Finished"],
  Stopped: [],
  Finished: [],
};

export function canTransition(from: ScenarioState, to: ScenarioState): boolean {
  return TRANSITIONS[from].includes(to);
}

export function isTerminal(state: ScenarioState): boolean {
  return state === "Stopped" || state === "Finished";
}

export interface LiveChartState {
  windowS: number;
  points: MetricsEvent[]; // rolling window, oldest first
  warnings: WarningEvent[];
  quarantine: QuarantineEvent[];
  lastMetrics: MetricsEvent | null;
  scenarioState: ScenarioState | null;
}

export function emptyChartState(windowS: number = DEFAULT_WINDOW_S): LiveChartState {
  return {
    windowS,
    points: [],
    warnings: [],
    quarantine: [],
    lastMetrics: null,
    scenarioState: null,
  };
}

/** Fold one stream event into the chart state (pure; returns a new state). */
export function applyEvent(state: LiveChartState, event: StreamEvent): LiveChartState {
  switch (event.type) {
    case "metrics": {
      const points = [...state.points, event];
      const horizon = event.t_ms - state.windowS * 1000;
      return {
        ...state,
        points: points.filter((p) => p.t_ms >= horizon),
        lastMetrics: event,
      };
    }
    case "fcw_warning":
      return { ...state, warnings: [...state.warnings, event] };
    case "quarantine_record":
      return { ...state, quarantine: [...state.quarantine, event] };
    case "state":
      return { ...state, scenarioState: event.state as ScenarioState };
    default:
      return state;
  }
}

export function applyAll(state: LiveChartState, events: StreamEvent[]): LiveChartState {
  return events.reduce(applyEvent, state);
}

/** Counters shown in the header; traceable 1:1 to the last metrics payload. */
export function counters(state: LiveChartState): {
  warnings: number;
  quarantined: number;
  latencyAvgMs: number;
  latencyMaxMs: number;
  throughputMbps: number;
} {
  const m = state.lastMetrics;
  return {
    warnings: m?.warnings ?? 0,
    quarantined: m?.quarantined ?? 0,
    latencyAvgMs: m?.latency_avg_ms ?? 0,
    latencyMaxMs: m?.latency_max_ms ?? 0,
    throughputMbps: m?.throughput_mbps ?? 0,
  };
}
