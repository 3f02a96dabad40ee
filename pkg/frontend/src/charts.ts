/** SVG builders for optimisation results: the three 2-D projections of the
 * objective space (third objective as color) and the average-rank bar chart.
 * Pure string builders, no DOM required. */

import type { FrontExport, FrontPoint, RankReport } from "./api.js";

export interface Projection {
  x: keyof Pick<FrontPoint, "likelihood" | "impact" | "availability">;
  y: keyof Pick<FrontPoint, "likelihood" | "impact" | "availability">;
  color: keyof Pick<FrontPoint, "likelihood" | "impact" | "availability">;
}

export const PROJECTIONS: Projection[] = [
  { x: "likelihood", y: "impact", color: "availability" },
  { x: "likelihood", y: "availability", color: "impact" },
  { x: "impact", y: "availability", color: "likelihood" },
];

const WIDTH = 360;
const HEIGHT = 260;
const PAD = 44;

interface Scale {
  lo: number;
  hi: number;
}

function scaleOf(values: number[]): Scale {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return { lo, hi };
}

function toX(value: number, scale: Scale): number {
  return PAD + ((value - scale.lo) / (scale.hi - scale.lo)) * (WIDTH - 2 * PAD);
}

function toY(value: number, scale: Scale): number {
  return HEIGHT - PAD - ((value - scale.lo) / (scale.hi - scale.lo)) * (HEIGHT - 2 * PAD);
}

/** Blue-to-red ramp for the colored third objective. */
export function colorRamp(t: number): string {
  const clamped = Math.max(0, Math.min(1, t));
  const r = Math.round(40 + 200 * clamped);
  const g = Math.round(80 + 60 * (1 - Math.abs(clamped - 0.5) * 2));
  const b = Math.round(220 - 180 * clamped);
  return `rgb(${r},${g},${b})`;
}

function fmt(value: number): string {
  return value.toPrecision(3);
}

/** One scatter projection; markers carry data-trial-id for selection. */
export function renderFrontProjection(
  fronts: FrontExport[],
  projection: Projection,
  selectedTrial: number | null = null,
): string {
  const markers = ["circle", "square", "diamond"];
  const all = fronts.flatMap((f) => f.trials);
  if (all.length === 0) {
    return `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}"><text x="${WIDTH / 2}" y="${HEIGHT / 2}" text-anchor="middle">no front points</text></svg>`;
  }
  const xScale = scaleOf(all.map((p) => p[projection.x]));
  const yScale = scaleOf(all.map((p) => p[projection.y]));
  const cScale = scaleOf(all.map((p) => p[projection.color]));

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" class="front-projection" ` +
      `viewBox="0 0 ${WIDTH} ${HEIGHT}" width="${WIDTH}" height="${HEIGHT}">`,
  );
  parts.push(
    `<rect x="${PAD}" y="${PAD}" width="${WIDTH - 2 * PAD}" height="${HEIGHT - 2 * PAD}" ` +
      `fill="#fafbfc" stroke="#d0d4da"/>`,
  );
  parts.push(
    `<text x="${WIDTH / 2}" y="${HEIGHT - 8}" text-anchor="middle" font-size="11">${projection.x}</text>`,
  );
  parts.push(
    `<text x="12" y="${HEIGHT / 2}" text-anchor="middle" font-size="11" ` +
      `transform="rotate(-90 12 ${HEIGHT / 2})">${projection.y}</text>`,
  );
  parts.push(
    `<text x="${WIDTH / 2}" y="14" text-anchor="middle" font-size="11" fill="#555">` +
      `color: ${projection.color} (${fmt(cScale.lo)}–${fmt(cScale.hi)})</text>`,
  );
  // axis extent labels
  parts.push(
    `<text x="${PAD}" y="${HEIGHT - PAD + 14}" font-size="9" text-anchor="middle">${fmt(xScale.lo)}</text>`,
    `<text x="${WIDTH - PAD}" y="${HEIGHT - PAD + 14}" font-size="9" text-anchor="middle">${fmt(xScale.hi)}</text>`,
    `<text x="${PAD - 4}" y="${HEIGHT - PAD}" font-size="9" text-anchor="end">${fmt(yScale.lo)}</text>`,
    `<text x="${PAD - 4}" y="${PAD + 4}" font-size="9" text-anchor="end">${fmt(yScale.hi)}</text>`,
  );

  fronts.forEach((front, runIndex) => {
    const marker = markers[runIndex % markers.length];
    for (const point of front.trials) {
      const x = toX(point[projection.x], xScale);
      const y = toY(point[projection.y], yScale);
      const tNorm = (point[projection.color] - cScale.lo) / (cScale.hi - cScale.lo || 1);
      const fill = colorRamp(tNorm);
      const selected = point.trial_id === selectedTrial;
      const stroke = selected ? "#111" : "#ffffff";
      const common =
        `class="front-point${selected ? " selected" : ""}" data-trial-id="${point.trial_id}" ` +
        `data-run-seed="${front.run_seed}" fill="${fill}" stroke="${stroke}" ` +
        `stroke-width="${selected ? 2.5 : 0.8}" cursor="pointer"`;
      if (marker === "circle") {
        parts.push(`<circle cx="${x}" cy="${y}" r="5" ${common}/>`);
      } else if (marker === "square") {
        parts.push(`<rect x="${x - 4}" y="${y - 4}" width="8" height="8" ${common}/>`);
      } else {
        parts.push(
          `<path d="M ${x} ${y - 5} L ${x + 5} ${y} L ${x} ${y + 5} L ${x - 5} ${y} z" ${common}/>`,
        );
      }
    }
  });

  if (fronts.length > 1) {
    parts.push(`<g class="legend" font-size="10">`);
    fronts.forEach((front, i) => {
      parts.push(
        `<text x="${WIDTH - PAD}" y="${PAD + 12 + i * 13}" text-anchor="end">` +
          `${markers[i % markers.length]} = seed ${front.run_seed}</text>`,
      );
    });
    parts.push(`</g>`);
  }

  parts.push(`</svg>`);
  return parts.join("");
}

/** Average-rank bars: rank 1 (mitigate first) renders as the shortest bar. */
export function renderRankBars(report: RankReport): string {
  const ids = Object.keys(report.average_ranks);
  const n = ids.length;
  if (n === 0) {
    return `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}"></svg>`;
  }
  const width = Math.max(WIDTH, n * 34 + 2 * PAD);
  const maxRank = Math.max(...Object.values(report.average_ranks));
  const best = ids.reduce((a, b) =>
    report.average_ranks[a]! <= report.average_ranks[b]! ? a : b,
  );
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" class="rank-bars" ` +
      `viewBox="0 0 ${width} ${HEIGHT}" width="${width}" height="${HEIGHT}">`,
  );
  parts.push(
    `<text x="${width / 2}" y="14" text-anchor="middle" font-size="11" fill="#555">` +
      `average rank across ${report.run_count} runs (lower = mitigate first)</text>`,
  );
  const barWidth = (width - 2 * PAD) / n - 8;
  ids.forEach((id, i) => {
    const value = report.average_ranks[id]!;
    const h = (value / maxRank) * (HEIGHT - 2 * PAD);
    const x = PAD + i * ((width - 2 * PAD) / n) + 4;
    const y = HEIGHT - PAD - h;
    const fill = id === best ? "#b03a2e" : "#3b6ea5";
    parts.push(
      `<rect class="rank-bar" data-vuln-id="${id}" x="${x}" y="${y}" ` +
        `width="${barWidth}" height="${h}" fill="${fill}">` +
        `<title>${id}: ${value.toFixed(2)}</title></rect>`,
    );
    parts.push(
      `<text x="${x + barWidth / 2}" y="${HEIGHT - PAD + 12}" text-anchor="middle" ` +
        `font-size="9">${id}</text>`,
    );
    parts.push(
      `<text x="${x + barWidth / 2}" y="${y - 3}" text-anchor="middle" font-size="8">` +
        `${value.toFixed(1)}</text>`,
    );
  });
  parts.push(`</svg>`);
  return parts.join("");
}

export interface PortfolioRow {
  vulnId: string;
  mitigation: number;
}

/** Table rows for a selected front point, strongest mitigation first. */
export function portfolioRows(point: FrontPoint): PortfolioRow[] {
  return Object.entries(point.portfolio)
    .map(([vulnId, mitigation]) => ({ vulnId, mitigation }))
    .sort((a, b) => b.mitigation - a.mitigation || a.vulnId.localeCompare(b.vulnId));
}
