// End-to-end console flow against a locally served gateway:
// login -> create -> start -> observe >=10 SSE events -> stop -> export.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, MetricsEvent, StreamEvent } from "../src/api.js";
import { applyAll, applyEvent, counters, emptyChartState, isTerminal } from "../src/state.js";

const PORT = 8400 + Math.floor(Math.random() * 400);
const BASE = `http://127.0.0.1:${PORT}`;
const USERNAME = "dev";
const PASSWORD = "console-pass";

let server: ChildProcess;

async function waitForGateway(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/api/v1/session`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ username: USERNAME, password: PASSWORD }),
      });
      if (resp.ok) return;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) throw new Error("gateway did not come up");
    await new Promise((r) => setTimeout(r, 150));
  }
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "cvedge-console-"));
  const creds = join(dir, "credentials.json");
  writeFileSync(creds, JSON.stringify([{ username: USERNAME, password: PASSWORD }]));
  server = spawn(
    "python3",
    ["-m", "cvedge.gateway.cli", "serve", "--port", String(PORT), "--credentials", creds],
    { stdio: ["ignore", "inherit", "inherit"] },
  );
  await waitForGateway();
}, 40_000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("console end-to-end", () => {
  it("rejects a bad credential without a session", async () => {
    const client = new ApiClient(BASE);
    await expect(client.login(USERNAME, "wrong")).rejects.toMatchObject({ status: 401 });
    expect(client.authenticated).toBe(false);
  });

  it(
    "login, create, start, watch, stop, export",
    async () => {
      const client = new ApiClient(BASE);
      const session = await client.login(USERNAME, PASSWORD);
      expect(session.subject).toBe(USERNAME);

      const topo = await client.topology();
      expect(topo.services).toContain("hetnet");

      // long wall-clock run, accelerated so summaries arrive quickly but the
      // scenario is still running when the user presses stop
      const handle = await client.createScenario({
        name: "console-e2e",
        duration_s: 3600,
        n_mobile: 3,
        n_fixed: 1,
        seed: 9,
        clock: "wall",
        wall_speedup: 40,
        faults: { tamper_prob: 0.05 },
      });
      expect(handle.state).toBe("Created");

      await client.start(handle.id);

      // live view: follow the stream until 10 metric events arrived
      let chart = emptyChartState();
      let metricsSeen = 0;
      const abort = new AbortController();
      const streaming = client
        .stream(
          handle.id,
          (event: StreamEvent) => {
            chart = applyEvent(chart, event);
            if (event.type === "metrics") {
              metricsSeen += 1;
              if (metricsSeen === 10) abort.abort();
            }
          },
          abort.signal,
        )
        .catch(() => {
          // reader abort is the expected exit path here
        });
      const watchDeadline = Date.now() + 30_000;
      while (metricsSeen < 10 && Date.now() < watchDeadline) {
        await new Promise((r) => setTimeout(r, 50));
      }
      await streaming;
      expect(metricsSeen).toBeGreaterThanOrEqual(10);
      expect(chart.points.length).toBeGreaterThan(0);

      const stopped = await client.stop(handle.id);
      expect(stopped.state).toBe("Stopped");

      // export exactly what the gateway serves: byte-equal to a direct fetch
      const exported = await client.exportReport(handle.id, "csv");
      const direct = await fetch(`${BASE}/api/v1/scenarios/${handle.id}/report?format=csv`, {
        headers: { authorization: `Bearer ${session.token}` },
      });
      expect(exported).toBe(await direct.text());
      expect(exported.startsWith("scenario,class,")).toBe(true);

      const exportedJson = JSON.parse(await client.exportReport(handle.id, "json")) as {
        scenario: string;
        warnings_emitted: number;
        quarantined: number;
      };
      expect(exportedJson.scenario).toBe("console-e2e");

      // replay the full (now finished) stream: the quarantine tab must agree
      // with the debug endpoint, and final chart counters with the report
      const replayEvents: StreamEvent[] = [];
      await client.stream(handle.id, (e) => replayEvents.push(e));
      const finalChart = applyAll(emptyChartState(), replayEvents);
      expect(finalChart.scenarioState).toBe("Stopped");
      expect(isTerminal(finalChart.scenarioState!)).toBe(true);

      const quarantine = await client.quarantine(handle.id);
      expect(finalChart.quarantine.length).toBe(quarantine.count);
      expect(quarantine.count).toBeGreaterThan(0);

      const finalCounters = counters(finalChart);
      expect(finalCounters.warnings).toBe(exportedJson.warnings_emitted);
      expect(finalCounters.quarantined).toBe(exportedJson.quarantined);

      const lastMetrics = finalChart.lastMetrics as MetricsEvent;
      expect(lastMetrics.final).toBe(true);
    },
    90_000,
  );

  it("export of an unfinished scenario is refused", async () => {
    const client = new ApiClient(BASE);
    await client.login(USERNAME, PASSWORD);
    const handle = await client.createScenario({
      name: "console-guard",
      duration_s: 5,
      n_mobile: 1,
      n_fixed: 1,
      seed: 1,
    });
    await expect(client.exportReport(handle.id, "csv")).rejects.toMatchObject({ status: 409 });
  });
});
