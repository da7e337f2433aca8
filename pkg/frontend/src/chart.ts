/**
 * Minimal SVG band chart: predicted outcome versus one treatment axis with
 * the 95% interval shaded, plus pinned comparison points.  Every plotted
 * value is taken verbatim from a service response.
 */

import type { PredictResponse } from "./api.js";
import type { Pin } from "./state.js";

export interface ChartSeries {
  label: string;
  points: PredictResponse[]; // one per level along the swept axis
}

const WIDTH = 560;
const HEIGHT = 280;
const MARGIN = { top: 16, right: 16, bottom: 34, left: 56 };
const COLORS = ["#2563eb", "#dc2626", "#059669", "#9333ea"];

function scale(
  value: number,
  domain: [number, number],
  range: [number, number],
): number {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  if (d1 === d0) return (r0 + r1) / 2;
  return r0 + ((value - d0) / (d1 - d0)) * (r1 - r0);
}

export function renderBandChart(
  container: HTMLElement,
  series: ChartSeries[],
  pins: Pin[],
  axisLabel: string,
): void {
  const allPoints = series.flatMap((s) => s.points);
  const pinned = pins.map((p) => p.response);
  const values = [...allPoints, ...pinned];
  if (values.length === 0) {
    container.innerHTML = "";
    return;
  }
  const levels = allPoints.map((p) => p.n);
  const xDomain: [number, number] = [
    Math.min(0, ...levels),
    Math.max(1, ...levels, ...pinned.map((p) => p.n)),
  ];
  const lows = values.map((p) => p.ci_low);
  const highs = values.map((p) => p.ci_high);
  const yDomain: [number, number] = [Math.min(...lows), Math.max(...highs)];
  const pad = (yDomain[1] - yDomain[0]) * 0.08 + 1e-9;
  yDomain[0] -= pad;
  yDomain[1] += pad;

  const xr: [number, number] = [MARGIN.left, WIDTH - MARGIN.right];
  const yr: [number, number] = [HEIGHT - MARGIN.bottom, MARGIN.top];
  const sx = (v: number) => scale(v, xDomain, xr).toFixed(1);
  const sy = (v: number) => scale(v, yDomain, yr).toFixed(1);

  const parts: string[] = [];
  series.forEach((s, i) => {
    const color = COLORS[i % COLORS.length] ?? "#2563eb";
    const sorted = [...s.points].sort((a, b) => a.n - b.n);
    const upper = sorted.map((p) => `${sx(p.n)},${sy(p.ci_high)}`);
    const lower = [...sorted].reverse().map((p) => `${sx(p.n)},${sy(p.ci_low)}`);
    parts.push(
      `<polygon class="band" data-series="${s.label}" ` +
        `points="${[...upper, ...lower].join(" ")}" ` +
        `fill="${color}" fill-opacity="0.15" stroke="none"></polygon>`,
    );
    const line = sorted.map((p) => `${sx(p.n)},${sy(p.mean)}`).join(" ");
    parts.push(
      `<polyline class="mean-line" data-series="${s.label}" points="${line}" ` +
        `fill="none" stroke="${color}" stroke-width="2"></polyline>`,
    );
    for (const p of sorted) {
      parts.push(
        `<circle class="mean-dot" data-series="${s.label}" data-n="${p.n}" ` +
          `data-mean="${p.mean}" cx="${sx(p.n)}" cy="${sy(p.mean)}" r="3" ` +
          `fill="${color}"></circle>`,
      );
    }
  });

  pins.forEach((pin, i) => {
    const color = COLORS[(series.length + i) % COLORS.length] ?? "#9333ea";
    const p = pin.response;
    parts.push(
      `<line class="pin-interval" data-pin="${pin.countyId}@${pin.n},${pin.b}" ` +
        `x1="${sx(p.n)}" y1="${sy(p.ci_low)}" x2="${sx(p.n)}" ` +
        `y2="${sy(p.ci_high)}" stroke="${color}" stroke-width="2" ` +
        `stroke-dasharray="4 3"></line>`,
    );
    parts.push(
      `<circle class="pin-dot" data-pin="${pin.countyId}@${pin.n},${pin.b}" ` +
        `data-mean="${p.mean}" cx="${sx(p.n)}" cy="${sy(p.mean)}" r="4" ` +
        `fill="${color}" stroke="white" stroke-width="1"></circle>`,
    );
  });

  const axisY = HEIGHT - MARGIN.bottom;
  parts.push(
    `<line x1="${MARGIN.left}" y1="${axisY}" x2="${WIDTH - MARGIN.right}" ` +
      `y2="${axisY}" stroke="#666"></line>`,
    `<text x="${(MARGIN.left + WIDTH - MARGIN.right) / 2}" ` +
      `y="${HEIGHT - 8}" text-anchor="middle" font-size="12">${axisLabel}</text>`,
  );

  container.innerHTML =
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" ` +
    `aria-label="predicted outcome with credible band">${parts.join("")}</svg>`;
}
