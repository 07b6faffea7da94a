// DOM layer: login -> topology -> scenario form -> live run view -> export.
// All data shown comes straight from gateway payloads via ApiClient.

import { ApiClient, ApiError, ScenarioHandle, StreamEvent } from "./api.js";
import { renderChart } from "./chart.js";
import {
  LiveChartState,
  applyEvent,
  counters,
  emptyChartState,
  isTerminal,
} from "./state.js";

interface Ui {
  root: HTMLElement;
  client: ApiClient | null;
  scenario: ScenarioHandle | null;
  chart: LiveChartState;
  abort: AbortController | null;
}

export function mountConsole(root: HTMLElement): Ui {
  const ui: Ui = { root, client: null, scenario: null, chart: emptyChartState(), abort: null };
  showLogin(ui);
  return ui;
}

function el<T extends HTMLElement>(ui: Ui, selector: string): T {
  const node = ui.root.querySelector<T>(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node;
}

// ---------------------------------------------------------------------------
// login view
// ---------------------------------------------------------------------------

function showLogin(ui: Ui, message = ""): void {
  ui.root.innerHTML = `
    <section class="card login">
      <h1>cvedge console</h1>
      <p class="error">${message}</p>
      <label>Server <input id="server" value="http://127.0.0.1:8400"/></label>
      <label>Username <input id="username" value="developer"/></label>
      <label>Password <input id="password" type="password" value=""/></label>
      <button id="login">Connect</button>
    </section>`;
  el<HTMLButtonElement>(ui, "#login").addEventListener("click", () => void doLogin(ui));
}

async function doLogin(ui: Ui): Promise<void> {
  const server = el<HTMLInputElement>(ui, "#server").value.replace(/\/$/, "");
  const username = el<HTMLInputElement>(ui, "#username").value;
  const password = el<HTMLInputElement>(ui, "#password").value;
  const client = new ApiClient(server);
  try {
    await client.login(username, password);
  } catch (err) {
    const detail =
      err instanceof ApiError && err.status === 401
        ? "invalid credential"
        : `connection failed: ${String(err)} (retry)`;
    showLogin(ui, detail);
    return;
  }
  ui.client = client;
  await showWorkbench(ui);
}

/** 401 mid-session sends the user back to login. */
function guard(ui: Ui, err: unknown): void {
  if (err instanceof ApiError && err.status === 401) {
    ui.client = null;
    showLogin(ui, "session expired, sign in again");
    return;
  }
  throw err;
}

// ---------------------------------------------------------------------------
// workbench: topology + scenario form + live view
// ---------------------------------------------------------------------------

async function showWorkbench(ui: Ui): Promise<void> {
  ui.root.innerHTML = `
    <header>
      <h1>cvedge console</h1>
      <span id="state-badge" class="badge">no scenario</span>
    </header>
    <main>
      <section class="card" id="topology-card">
        <h2>Topology</h2>
        <div id="topology">loading&hellip;</div>
      </section>
      <section class="card">
        <h2>Scenario</h2>
        <form id="scenario-form">
          <label>Name <input name="name" value="console-run"/></label>
          <label>Duration s <input name="duration_s" type="number" value="15" min="0"/></label>
          <label>Mobile edges <input name="n_mobile" type="number" value="5" min="0"/></label>
          <label>Fixed edges <input name="n_fixed" type="number" value="1" min="1"/></label>
          <label>Clock
            <select name="clock"><option>virtual</option><option>wall</option></select>
          </label>
          <label>Tamper probability <input name="tamper_prob" type="number" step="0.01" value="0.05"/></label>
          <label><input name="fcw" type="checkbox"/> forward collision warning</label>
          <div id="form-errors" class="error"></div>
          <button id="create" type="button">Create</button>
          <button id="start" type="button" disabled>Start</button>
          <button id="stop" type="button" disabled>Stop</button>
        </form>
      </section>
      <section class="card wide">
        <h2>Live run</h2>
        <div id="counters"></div>
        <canvas id="chart" width="860" height="280"></canvas>
        <nav class="tabs">
          <button data-tab="warnings">Warnings</button>
          <button data-tab="quarantine">Quarantine</button>
        </nav>
        <div id="tab-warnings" class="tab"><em>none yet</em></div>
        <div id="tab-quarantine" class="tab hidden"><em>none yet</em></div>
        <div class="export">
          <button id="export-csv" disabled>Export CSV</button>
          <button id="export-json" disabled>Export JSON</button>
        </div>
      </section>
    </main>`;

  el<HTMLButtonElement>(ui, "#create").addEventListener("click", () => void createScenario(ui));
  el<HTMLButtonElement>(ui, "#start").addEventListener("click", () => void startScenario(ui));
  el<HTMLButtonElement>(ui, "#stop").addEventListener("click", () => void stopScenario(ui));
  el<HTMLButtonElement>(ui, "#export-csv").addEventListener("click", () => void exportRun(ui, "csv"));
  el<HTMLButtonElement>(ui, "#export-json").addEventListener("click", () => void exportRun(ui, "json"));
  ui.root.querySelectorAll<HTMLButtonElement>(".tabs button").forEach((button) =>
    button.addEventListener("click", () => {
      el(ui, "#tab-warnings").classList.toggle("hidden", button.dataset.tab !== "warnings");
      el(ui, "#tab-quarantine").classList.toggle("hidden", button.dataset.tab !== "quarantine");
    }),
  );
  await refreshTopology(ui);
}

async function refreshTopology(ui: Ui): Promise<void> {
  if (!ui.client) return;
  try {
    const topo = await ui.client.topology();
    const rows = topo.edges
      .map(
        (e) =>
          `<tr><td>${e.scenario_id}</td><td>${e.system_edges}</td><td>${e.fixed_edges}</td>` +
          `<td>${e.mobile_edges}</td><td>${e.state}</td></tr>`,
      )
      .join("");
    el(ui, "#topology").innerHTML = `
      <p>services: ${topo.services.join(", ")}</p>
      <table>
        <tr><th>scenario</th><th>system</th><th>fixed</th><th>mobile</th><th>state</th></tr>
        ${rows || "<tr><td colspan=5><em>no scenarios yet</em></td></tr>"}
      </table>`;
  } catch (err) {
    guard(ui, err);
  }
}

function formScenario(ui: Ui): Record<string, unknown> {
  const form = el<HTMLFormElement>(ui, "#scenario-form");
  const data = new FormData(form);
  return {
    name: String(data.get("name") || "console-run"),
    duration_s: Number(data.get("duration_s")),
    n_mobile: Number(data.get("n_mobile")),
    n_fixed: Number(data.get("n_fixed")),
    clock: String(data.get("clock")),
    seed: Math.floor(Math.random() * 1e6),
    apps: { fcw: data.get("fcw") === "on", traffic_collection: true },
    faults: { tamper_prob: Number(data.get("tamper_prob") || 0) },
  };
}

function setBadge(ui: Ui, text: string): void {
  el(ui, "#state-badge").textContent = text;
}

function setButtons(ui: Ui, opts: { start: boolean; stop: boolean; exp: boolean }): void {
  el<HTMLButtonElement>(ui, "#start").disabled = !opts.start;
  el<HTMLButtonElement>(ui, "#stop").disabled = !opts.stop;
  el<HTMLButtonElement>(ui, "#export-csv").disabled = !opts.exp;
  el<HTMLButtonElement>(ui, "#export-json").disabled = !opts.exp;
}

async function createScenario(ui: Ui): Promise<void> {
  if (!ui.client) return;
  el(ui, "#form-errors").textContent = "";
  try {
    ui.scenario = await ui.client.createScenario(formScenario(ui));
    ui.chart = emptyChartState();
    setBadge(ui, `${ui.scenario.id}: Created`);
    setButtons(ui, { start: true, stop: false, exp: false });
    await refreshTopology(ui);
  } catch (err) {
    if (err instanceof ApiError && err.status === 400) {
      const detail = Array.isArray(err.detail) ? err.detail.join("; ") : String(err.detail);
      el(ui, "#form-errors").textContent = detail;
      return;
    }
    guard(ui, err);
  }
}

async function startScenario(ui: Ui): Promise<void> {
  if (!ui.client || !ui.scenario) return;
  try {
    await ui.client.start(ui.scenario.id);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setBadge(ui, `${ui.scenario.id}: state conflict`);
      return;
    }
    guard(ui, err);
    return;
  }
  setBadge(ui, `${ui.scenario.id}: Running`);
  setButtons(ui, { start: false, stop: true, exp: false });
  ui.abort = new AbortController();
  void followStream(ui);
}

async function followStream(ui: Ui): Promise<void> {
  if (!ui.client || !ui.scenario) return;
  const id = ui.scenario.id;
  try {
    await ui.client.stream(
      id,
      (event: StreamEvent) => {
        ui.chart = applyEvent(ui.chart, event);
        renderLive(ui);
      },
      ui.abort?.signal,
    );
  } catch {
    // stream drop: a fresh connection replays from the beginning, so reset
    // the chart state instead of double-counting warnings and quarantines
    if (!ui.abort?.signal.aborted) {
      ui.chart = emptyChartState();
      setTimeout(() => void followStream(ui), 500);
      return;
    }
  }
  const state = ui.chart.scenarioState;
  if (state && isTerminal(state)) {
    setBadge(ui, `${id}: ${state}`);
    setButtons(ui, { start: false, stop: false, exp: true });
    await refreshTopology(ui);
  }
}

async function stopScenario(ui: Ui): Promise<void> {
  if (!ui.client || !ui.scenario) return;
  try {
    const handle = await ui.client.stop(ui.scenario.id);
    setBadge(ui, `${ui.scenario.id}: ${handle.state}`);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setBadge(ui, `${ui.scenario.id}: state conflict`);
      return;
    }
    guard(ui, err);
  }
}

function renderLive(ui: Ui): void {
  const c = counters(ui.chart);
  el(ui, "#counters").innerHTML =
    `<span>avg ${c.latencyAvgMs.toFixed(1)} ms</span>` +
    `<span>max ${c.latencyMaxMs.toFixed(1)} ms</span>` +
    `<span>${c.throughputMbps.toFixed(4)} Mbit/s</span>` +
    `<span>warnings ${c.warnings}</span>` +
    `<span>quarantined ${c.quarantined}</span>`;
  renderChart(ui.chart, el<HTMLCanvasElement>(ui, "#chart"));
  if (ui.chart.warnings.length) {
    el(ui, "#tab-warnings").innerHTML = ui.chart.warnings
      .slice(-50)
      .map(
        (w) =>
          `<div>t=${w.t_ms}ms gap ${w.gap_m.toFixed(2)}m &lt; d_w ${w.d_w_m.toFixed(2)}m ` +
          `(${w.follower_pseudonym} behind ${w.preceding_pseudonym})</div>`,
      )
      .join("");
  }
  if (ui.chart.quarantine.length) {
    el(ui, "#tab-quarantine").innerHTML =
      `<p>${ui.chart.quarantine.length} records</p>` +
      ui.chart.quarantine
        .slice(-50)
        .map(
          (q) =>
            `<div>t=${q.t_ms}ms ${q.topic}/${q.producer}#${q.seq} &rarr; ${q.consumer}: ${q.reason}</div>`,
        )
        .join("");
  }
}

async function exportRun(ui: Ui, format: "csv" | "json"): Promise<void> {
  if (!ui.client || !ui.scenario) return;
  try {
    const text = await ui.client.exportReport(ui.scenario.id, format);
    const blob = new Blob([text], { type: format === "csv" ? "text/csv" : "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `${ui.scenario.id}-report.${format}`;
    link.click();
    URL.revokeObjectURL(link.href);
  } catch (err) {
    guard(ui, err);
  }
}
