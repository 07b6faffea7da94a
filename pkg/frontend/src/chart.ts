// Canvas renderer for the live latency/throughput chart. Values are drawn
// exactly as received; the only additions are the 200 ms and 1000 ms
// requirement guide-lines.

import { LiveChartState, MOBILITY_THRESHOLD_MS, SAFETY_THRESHOLD_MS } from "./state.js";

const PAD = { left: 48, right: 56, top: 10, bottom: 22 };

export function renderChart(state: LiveChartState, canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.font = "10px sans-serif";

  const points = state.points;
  const plotW = width - PAD.left - PAD.right;
  const plotH = height - PAD.top - PAD.bottom;
  if (plotW <= 0 || plotH <= 0) return;

  const tMax = points.length ? points[points.length - 1].t_ms : 0;
  const tMin = Math.max(0, tMax - state.windowS * 1000);
  const latTop = Math.max(
    MOBILITY_THRESHOLD_MS,
    ...points.map((p) => p.latency_max_ms),
  ) * 1.05;
  const thrTop = Math.max(1e-6, ...points.map((p) => p.throughput_mbps)) * 1.2;

  const x = (t: number) =>
    PAD.left + (tMax === tMin ? 0 : ((t - tMin) / (tMax - tMin)) * plotW);
  const yLat = (v: number) => PAD.top + plotH - (v / latTop) * plotH;
  const yThr = (v: number) => PAD.top + plotH - (v / thrTop) * plotH;

  // requirement guide-lines
  for (const [value, label, color] of [
    [SAFETY_THRESHOLD_MS, "200 ms safety", "#c0392b"],
    [MOBILITY_THRESHOLD_MS, "1000 ms mobility", "#e67e22"],
  ] as const) {
    ctx.strokeStyle = color;
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(PAD.left, yLat(value));
    ctx.lineTo(width - PAD.right, yLat(value));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = color;
    ctx.fillText(label, PAD.left + 4, yLat(value) - 3);
  }

  const drawSeries = (
    values: (p: (typeof points)[number]) => number,
    yScale: (v: number) => number,
    color: string,
  ) => {
    if (!points.length) return;
    ctx.strokeStyle = color;
    ctx.beginPath();
    points.forEach((p, i) => {
      const px = x(p.t_ms);
      const py = yScale(values(p));
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  };

  drawSeries((p) => p.latency_avg_ms, yLat, "#2980b9");
  drawSeries((p) => p.latency_max_ms, yLat, "#8e44ad");
  drawSeries((p) => p.throughput_mbps, yThr, "#27ae60");

  // axes
  ctx.strokeStyle = "#555";
  ctx.strokeRect(PAD.left, PAD.top, plotW, plotH);
  ctx.fillStyle = "#333";
  ctx.fillText(`${(tMin / 1000).toFixed(0)}s`, PAD.left, height - 8);
  ctx.fillText(`${(tMax / 1000).toFixed(0)}s`, width - PAD.right - 18, height - 8);
  ctx.fillText(`${latTop.toFixed(0)}ms`, 4, PAD.top + 10);
  ctx.fillText(`${thrTop.toFixed(2)}Mb/s`, width - PAD.right + 2, PAD.top + 10);
  ctx.fillText("avg", PAD.left + 4, PAD.top + 12);
  ctx.fillStyle = "#8e44ad";
  ctx.fillText("max", PAD.left + 30, PAD.top + 12);
  ctx.fillStyle = "#27ae60";
  ctx.fillText("throughput", PAD.left + 60, PAD.top + 12);
}
