import { describe, expect, it } from "vitest";

import { MetricsEvent, QuarantineEvent, StreamEvent } from "../src/api.js";
import {
  applyAll,
  applyEvent,
  canTransition,
  counters,
  emptyChartState,
  isTerminal,
} from "../src/state.js";

function metrics(t_ms: number, extra: Partial<MetricsEvent> = {}): MetricsEvent {
  return {
    type: "metrics",
    t_ms,
    latency_avg_ms: 50,
    latency_max_ms: 90,
    throughput_mbps: 0.5,
    warnings: 0,
    quarantined: 0,
    ...extra,
  };
}

describe("scenario lifecycle", () => {
  it("allows only the documented transitions", () => {
    expect(canTransition("Created", "Running")).toBe(true);
    expect(canTransition("Running", "Stopped")).toBe(true);
    expect(canTransition("Running", "Finished")).toBe(true);
    expect(canTransition("Created", "Finished")).toBe(false);
    expect(canTransition("Stopped", "Running")).toBe(false);
    expect(canTransition("Finished", "Running")).toBe(false);
  });

  it("terminal states", () => {
    expect(isTerminal("Stopped")).toBe(true);
    expect(isTerminal("Finished")).toBe(true);
    expect(isTerminal("Running")).toBe(false);
  });
});

describe("live chart state", () => {
  it("stores received values verbatim (no smoothing)", () => {
    const event = metrics(1000, { latency_avg_ms: 53.7, throughput_mbps: 0.032064 });
    const state = applyEvent(emptyChartState(), event);
    expect(state.points).toHaveLength(1);
    expect(state.points[0]).toEqual(event);
    const c = counters(state);
    expect(c.latencyAvgMs).toBe(53.7);
    expect(c.throughputMbps).toBe(0.032064);
  });

  it("keeps a rolling window", () => {
    let state = emptyChartState(120);
    for (let s = 1; s <= 200; s++) {
      state = applyEvent(state, metrics(s * 1000));
    }
    expect(state.points[0].t_ms).toBe(80_000); // 200s - 120s window
    expect(state.points.at(-1)?.t_ms).toBe(200_000);
  });

  it("accumulates warnings and quarantine records", () => {
    const quarantine: QuarantineEvent = {
      type: "quarantine_record",
      topic: "bsm.raw.f0",
      producer: "m0",
      seq: 4,
      consumer: "f0",
      reason: "BadSignature",
      t_ms: 1500,
    };
    const events: StreamEvent[] = [
      metrics(1000),
      quarantine,
      {
        type: "fcw_warning",
        t_ms: 1700,
        follower_pseudonym: "p-1",
        preceding_pseudonym: "p-2",
        gap_m: 7.2,
        d_w_m: 7.98,
      },
      metrics(2000, { warnings: 1, quarantined: 1 }),
      { type: "state", state: "Finished" },
    ];
    const state = applyAll(emptyChartState(), events);
    expect(state.quarantine).toHaveLength(1);
    expect(state.warnings).toHaveLength(1);
    expect(state.scenarioState).toBe("Finished");
    // header counters equal the latest gateway payload exactly
    expect(counters(state).warnings).toBe(1);
    expect(counters(state).quarantined).toBe(1);
  });

  it("applyEvent is pure", () => {
    const before = emptyChartState();
    applyEvent(before, metrics(1000));
    expect(before.points).toHaveLength(0);
  });
});
