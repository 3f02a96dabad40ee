/** SVG rendering of the model graph.
 *
 * Styling convention: assets yellow, vulnerabilities blue, hazards purple,
 * and the attacker's objective red. Observed nodes carry an evidence badge
 * showing the observed state. Rendering is a pure string builder so it can
 * run (and be tested) without a DOM. */

import type { ModelDocument, NodeDoc } from "./api.js";
import { layoutModel } from "./layout.js";

export const KIND_FILLS: Record<string, string> = {
  asset: "#f2c94c",
  vulnerability: "#5b8def",
  hazard: "#9b59b6",
  goal: "#e05d4f",
};

export interface GraphViewOptions {
  evidence?: Record<string, number>;
  selected?: string | null;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function isGoal(node: NodeDoc): boolean {
  return node.kind === "hazard" && Boolean((node.attrs as { is_goal?: boolean }).is_goal);
}

function shortLabel(id: string): string {
  return id.length > 18 ? id.slice(0, 17) + "…" : id;
}

/** Render the whole model once: every node exactly once, edges underneath. */
export function renderModelSvg(document: ModelDocument, options: GraphViewOptions = {}): string {
  const evidence = options.evidence ?? {};
  const layout = layoutModel(document);
  const parts: string[] = [];
  const radius = 17;

  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" class="graph-view" ` +
      `viewBox="0 0 ${layout.width} ${layout.height}" ` +
      `width="${layout.width}" height="${layout.height}">`,
  );

  parts.push(`<g class="edges" stroke="#8a8f98" stroke-width="1.2" fill="none">`);
  for (const [parent, child] of document.edges) {
    const from = layout.positions.get(parent);
    const to = layout.positions.get(child);
    if (!from || !to) continue;
    const midX = (from.x + to.x) / 2;
    parts.push(
      `<path d="M ${from.x + radius} ${from.y} C ${midX} ${from.y}, ` +
        `${midX} ${to.y}, ${to.x - radius} ${to.y}" marker-end="url(#arrow)"/>`,
    );
  }
  parts.push(`</g>`);

  parts.push(
    `<defs><marker id="arrow" viewBox="0 0 8 8" refX="7" refY="4" markerWidth="7" ` +
      `markerHeight="7" orient="auto-start-reverse">` +
      `<path d="M 0 0 L 8 4 L 0 8 z" fill="#8a8f98"/></marker></defs>`,
  );

  for (const node of document.nodes) {
    const pos = layout.positions.get(node.id);
    if (!pos) continue;
    const fill = isGoal(node) ? KIND_FILLS.goal : (KIND_FILLS[node.kind] ?? "#cccccc");
    const selected = options.selected === node.id;
    const stroke = selected ? "#111111" : "#49505a";
    const strokeWidth = selected ? 3 : 1.2;
    const classes = ["node", node.kind, isGoal(node) ? "goal" : "", selected ? "selected" : ""]
      .filter(Boolean)
      .join(" ");
    parts.push(
      `<g class="${classes}" data-node-id="${escapeXml(node.id)}" ` +
        `transform="translate(${pos.x}, ${pos.y})" cursor="pointer">`,
    );
    parts.push(
      `<circle r="${radius}" fill="${fill}" stroke="${stroke}" stroke-width="${strokeWidth}">` +
        `<title>${escapeXml(node.label || node.id)}</title></circle>`,
    );
    const state = evidence[node.id];
    if (state !== undefined) {
      parts.push(
        `<g class="evidence-badge"><circle cx="${radius - 3}" cy="${-radius + 3}" r="8" ` +
          `fill="${state === 1 ? "#d7263d" : "#2e933c"}" stroke="#ffffff" stroke-width="1.5"/>` +
          `<text x="${radius - 3}" y="${-radius + 7}" text-anchor="middle" ` +
          `font-size="10" fill="#ffffff" font-weight="bold">${state}</text></g>`,
      );
    }
    parts.push(
      `<text y="${radius + 13}" text-anchor="middle" font-size="10" fill="#2c3038">` +
        `${escapeXml(shortLabel(node.id))}</text>`,
    );
    parts.push(`</g>`);
  }

  parts.push(`</svg>`);
  return parts.join("");
}

/** Count of rendered node glyphs in an SVG produced by renderModelSvg. */
export function countRenderedNodes(svg: string): number {
  return (svg.match(/data-node-id=/g) ?? []).length;
}
