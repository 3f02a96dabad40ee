import { describe, expect, it } from "vitest";

import type { FrontExport, ModelDocument, RankReport } from "../src/api.js";
import { PROJECTIONS, colorRamp, portfolioRows, renderFrontProjection, renderRankBars } from "../src/charts.js";
import { KIND_FILLS, countRenderedNodes, renderModelSvg } from "../src/graphview.js";
import { layoutModel } from "../src/layout.js";

const doc: ModelDocument = {
  nodes: [
    { id: "V1", kind: "vulnerability", label: "entry", attrs: {} },
    { id: "V2", kind: "vulnerability", label: "second entry", attrs: {} },
    { id: "A1", kind: "asset", label: "controller", attrs: {} },
    { id: "H1", kind: "hazard", label: "upset", attrs: {} },
    { id: "H2", kind: "hazard", label: "outage", attrs: { is_goal: true } },
  ],
  edges: [
    ["V1", "A1"],
    ["V2", "A1"],
    ["A1", "H1"],
    ["H1", "H2"],
  ],
  attack_feasibility: 1,
  evaluation_date: "2025-07-01",
};

describe("layoutModel", () => {
  it("places parents in earlier layers than children", () => {
    const layout = layoutModel(doc);
    for (const [parent, child] of doc.edges) {
      expect(layout.positions.get(parent)!.layer).toBeLessThan(
        layout.positions.get(child)!.layer,
      );
    }
  });

  it("positions every node exactly once", () => {
    const layout = layoutModel(doc);
    expect(layout.positions.size).toBe(doc.nodes.length);
    expect(layout.width).toBeGreaterThan(0);
    expect(layout.height).toBeGreaterThan(0);
  });
});

describe("renderModelSvg", () => {
  it("renders every node exactly once with kind styling", () => {
    const svg = renderModelSvg(doc);
    expect(countRenderedNodes(svg)).toBe(5);
    expect(svg).toContain(KIND_FILLS.vulnerability);
    expect(svg).toContain(KIND_FILLS.asset);
    expect(svg).toContain(KIND_FILLS.hazard);
  });

  it("highlights the goal distinctly from plain hazards", () => {
    const svg = renderModelSvg(doc);
    expect(svg).toContain(KIND_FILLS.goal);
    expect(svg).toContain('class="node hazard goal"');
  });

  it("draws evidence badges matching the evidence set", () => {
    const svg = renderModelSvg(doc, { evidence: { A1: 1, V2: 0 } });
    expect((svg.match(/evidence-badge/g) ?? []).length).toBe(2);
  });

  it("marks the selected node", () => {
    const svg = renderModelSvg(doc, { selected: "A1" });
    expect(svg).toContain('class="node asset selected"');
  });
});

const sampleFront: FrontExport = {
  job_id: "j-1",
  model_id: "m-1",
  revision: 1,
  run_seed: 7,
  trial_count: 100,
  trials: [
    { trial_id: 3, likelihood: 0.1, impact: 0.0, availability: 0.6, portfolio: { V1: 0.9, V2: 0.2 } },
    { trial_id: 8, likelihood: 0.05, impact: 0.0, availability: 0.55, portfolio: { V1: 0.4, V2: 0.8 } },
  ],
  top: { trial_id: 3, likelihood: 0.1, impact: 0.0, availability: 0.6, portfolio: { V1: 0.9, V2: 0.2 } },
};

describe("front projections", () => {
  it("covers the three objective pairs", () => {
    const axes = PROJECTIONS.map((p) => `${p.x}/${p.y}`);
    expect(axes).toEqual([
      "likelihood/impact",
      "likelihood/availability",
      "impact/availability",
    ]);
  });

  it("renders one marker per front point", () => {
    const svg = renderFrontProjection([sampleFront], PROJECTIONS[1]!);
    expect((svg.match(/data-trial-id=/g) ?? []).length).toBe(2);
    expect(svg).toContain("color: impact");
  });

  it("distinguishes overlaid runs with a legend", () => {
    const second: FrontExport = { ...sampleFront, job_id: "j-2", run_seed: 9 };
    const svg = renderFrontProjection([sampleFront, second], PROJECTIONS[1]!);
    expect(svg).toContain("seed 7");
    expect(svg).toContain("seed 9");
  });

  it("marks the selected trial", () => {
    const svg = renderFrontProjection([sampleFront], PROJECTIONS[1]!, 8);
    expect(svg).toContain('class="front-point selected"');
  });

  it("keeps the color ramp inside rgb bounds", () => {
    for (const t of [-1, 0, 0.25, 0.5, 0.75, 1, 2]) {
      const match = colorRamp(t).match(/^rgb\((\d+),(\d+),(\d+)\)$/);
      expect(match).not.toBeNull();
      for (const channel of match!.slice(1).map(Number)) {
        expect(channel).toBeGreaterThanOrEqual(0);
        expect(channel).toBeLessThanOrEqual(255);
      }
    }
  });
});

describe("rank bars", () => {
  const report: RankReport = {
    model_id: "m-1",
    revision: 1,
    average_ranks: { V1: 1.4, V2: 3.1, V3: 2.0 },
    run_count: 5,
    trials_per_run: 500,
    top_portfolios: [],
  };

  it("renders one bar per vulnerability with rank-1 shortest", () => {
    const svg = renderRankBars(report);
    expect((svg.match(/class="rank-bar"/g) ?? []).length).toBe(3);
    const heights = [...svg.matchAll(/data-vuln-id="(V\d)"[^/]*height="([\d.]+)"/g)].map(
      (m) => [m[1], Number(m[2])] as const,
    );
    const byId = Object.fromEntries(heights);
    expect(byId.V1).toBeLessThan(byId.V3!);
    expect(byId.V3).toBeLessThan(byId.V2!);
  });
});

describe("portfolioRows", () => {
  it("sorts strongest mitigation first", () => {
    const rows = portfolioRows(sampleFront.trials[1]!);
    expect(rows.map((r) => r.vulnId)).toEqual(["V2", "V1"]);
  });
});
