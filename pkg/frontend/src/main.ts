/** Browser entry: wires the API client and session state to the DOM.
 *
 * Every control issues exactly one API call; the risk gauge and charts only
 * ever show server-computed numbers, tagged with the revision they came
 * from and flagged once the model moves past them. */

import { ApiClient, ApiError } from "./api.js";
import type { FrontPoint, ModelPayload, NodeDoc } from "./api.js";
import { PROJECTIONS, portfolioRows, renderFrontProjection, renderRankBars } from "./charts.js";
import { renderModelSvg } from "./graphview.js";
import { Session } from "./session.js";

const session = new Session();
let client = new ApiClient(localStorage.getItem("cpsdss.baseUrl") ?? "http://127.0.0.1:8400");
let model: ModelPayload | null = null;
let selectedFrontPoint: FrontPoint | null = null;

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function banner(message: string, retry?: () => void): void {
  const box = el<HTMLDivElement>("banner");
  box.innerHTML = "";
  if (!message) {
    box.hidden = true;
    return;
  }
  box.hidden = false;
  box.textContent = message;
  if (retry) {
    const button = document.createElement("button");
    button.textContent = "retry";
    button.addEventListener("click", () => {
      banner("");
      retry();
    });
    box.appendChild(button);
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    const detail = Array.isArray(err.detail) ? err.detail.join("; ") : err.detail;
    return detail ? `${err.message}: ${detail}` : err.message;
  }
  return String(err);
}

// --- model view ---------------------------------------------------------------

function renderGraph(): void {
  if (!model) return;
  el<HTMLDivElement>("graph").innerHTML = renderModelSvg(model.document, {
    evidence: session.evidence,
    selected: session.selectedNode,
  });
  for (const glyph of document.querySelectorAll<SVGGElement>("#graph [data-node-id]")) {
    glyph.addEventListener("click", () => {
      session.selectedNode = glyph.dataset.nodeId ?? null;
      renderGraph();
      renderNodePanel();
    });
  }
  el<HTMLSpanElement>("model-meta").textContent =
    `${model.model_id} @ rev ${session.revision} (${model.document.nodes.length} nodes)`;
}

function findNode(nodeId: string): NodeDoc | null {
  return model?.document.nodes.find((n) => n.id === nodeId) ?? null;
}

function renderNodePanel(): void {
  const panel = el<HTMLDivElement>("node-panel");
  const nodeId = session.selectedNode;
  if (!model || !nodeId) {
    panel.hidden = true;
    return;
  }
  const node = findNode(nodeId);
  if (!node) {
    panel.hidden = true;
    return;
  }
  panel.hidden = false;
  el<HTMLHeadingElement>("node-title").textContent = `${node.id} (${node.kind})`;
  el<HTMLParagraphElement>("node-label").textContent = node.label || "";
  el<HTMLPreElement>("node-attrs").textContent = JSON.stringify(node.attrs, null, 2);

  const evidenceState = session.evidence[node.id];
  el<HTMLSpanElement>("evidence-state").textContent =
    evidenceState === undefined ? "unobserved" : `observed = ${evidenceState}`;

  const mitigation = el<HTMLDivElement>("mitigation-edit");
  if (node.kind === "vulnerability") {
    mitigation.hidden = false;
    const current = (node.attrs as { mitigation_prob?: number }).mitigation_prob ?? 0;
    el<HTMLInputElement>("mitigation-input").value = String(current);
  } else {
    mitigation.hidden = true;
  }
}

async function loadModel(modelId: string): Promise<void> {
  try {
    const payload = await client.getModel(modelId);
    model = payload;
    session.loadModel(payload);
    banner("");
    renderGraph();
    renderNodePanel();
    renderRiskGauge();
    renderFronts();
  } catch (err) {
    banner(`failed to load model: ${describeError(err)}`, () => void loadModel(modelId));
  }
}

async function uploadFixture(text: string): Promise<void> {
  try {
    const payload = await client.createModel(JSON.parse(text));
    model = payload;
    session.loadModel(payload);
    el<HTMLInputElement>("model-id").value = payload.model_id;
    banner("");
    renderGraph();
    renderNodePanel();
    renderRiskGauge();
  } catch (err) {
    banner(`upload failed: ${describeError(err)}`);
  }
}

// --- incident steering ----------------------------------------------------------

function renderRiskGauge(): void {
  const gauge = el<HTMLDivElement>("risk-gauge");
  const cached = session.risk;
  if (!cached) {
    gauge.textContent = "no inference yet";
    gauge.classList.remove("stale");
    return;
  }
  const risk = cached.value;
  gauge.innerHTML =
    `<span>P(E) ${risk.attack_likelihood.toFixed(4)}</span>` +
    `<span>P(I) ${risk.severe_impact.toFixed(4)}</span>` +
    `<span>R ${risk.composite_risk.toFixed(4)}</span>` +
    `<span class="tag">rev ${cached.revision}${session.riskIsStale() ? " (stale)" : ""}</span>`;
  gauge.classList.toggle("stale", session.riskIsStale());
}

/** PATCH one thing, then re-run inference: the steer loop. */
async function patchAndInfer(patch: () => Promise<ModelPayload>): Promise<void> {
  if (!model) return;
  try {
    const payload = await patch();
    model = payload;
    session.loadModel(payload);
    renderGraph();
    renderNodePanel();
    renderRiskGauge(); // previous gauge now flagged stale until inference lands
    renderFronts();
    const inference = await client.infer(model.model_id, {});
    session.cacheRisk(inference);
    renderRiskGauge();
    banner("");
  } catch (err) {
    banner(describeError(err));
  }
}

function wireSteering(): void {
  el<HTMLButtonElement>("evidence-compromised").addEventListener("click", () => {
    const nodeId = session.selectedNode;
    if (!model || !nodeId) return;
    void patchAndInfer(() => client.patchNode(model!.model_id, nodeId, { evidence: 1 }));
  });
  el<HTMLButtonElement>("evidence-clean").addEventListener("click", () => {
    const nodeId = session.selectedNode;
    if (!model || !nodeId) return;
    void patchAndInfer(() => client.patchNode(model!.model_id, nodeId, { evidence: 0 }));
  });
  el<HTMLButtonElement>("evidence-clear").addEventListener("click", () => {
    const nodeId = session.selectedNode;
    if (!model || !nodeId) return;
    void patchAndInfer(() => client.patchNode(model!.model_id, nodeId, { evidence: null }));
  });
  const slider = el<HTMLInputElement>("feasibility-slider");
  slider.addEventListener("change", () => {
    if (!model) return;
    const value = Number(slider.value);
    el<HTMLSpanElement>("feasibility-value").textContent = value.toFixed(2);
    void patchAndInfer(() => client.patchModel(model!.model_id, { attack_feasibility: value }));
  });
  el<HTMLButtonElement>("mitigation-apply").addEventListener("click", () => {
    const nodeId = session.selectedNode;
    if (!model || !nodeId) return;
    const value = Number(el<HTMLInputElement>("mitigation-input").value);
    void patchAndInfer(() =>
      client.patchNode(model!.model_id, nodeId, { attrs: { mitigation_prob: value } }),
    );
  });
  el<HTMLButtonElement>("infer-now").addEventListener("click", () => {
    if (!model) return;
    void (async () => {
      try {
        const inference = await client.infer(model!.model_id, {});
        session.cacheRisk(inference);
        renderRiskGauge();
      } catch (err) {
        banner(describeError(err));
      }
    })();
  });
}

// --- optimisation runs -----------------------------------------------------------

function renderFronts(): void {
  const tagged = session.fronts();
  const container = el<HTMLDivElement>("front-charts");
  container.innerHTML = "";
  if (tagged.length === 0) {
    return;
  }
  const stale = tagged.some((t) => t.revision < session.revision);
  el<HTMLSpanElement>("front-meta").textContent = stale
    ? `computed at rev ${tagged.map((t) => t.revision).join(",")} — model has moved on (stale)`
    : `rev ${tagged.map((t) => t.revision).join(",")}`;
  const fronts = tagged.map((t) => t.value);
  for (const projection of PROJECTIONS) {
    const cell = document.createElement("div");
    cell.innerHTML = renderFrontProjection(
      fronts,
      projection,
      selectedFrontPoint?.trial_id ?? null,
    );
    container.appendChild(cell);
  }
  for (const marker of container.querySelectorAll<SVGElement>("[data-trial-id]")) {
    marker.addEventListener("click", () => {
      const trialId = Number(marker.dataset.trialId);
      const fromRun = fronts.find((f) => f.trials.some((p) => p.trial_id === trialId));
      selectedFrontPoint = fromRun?.trials.find((p) => p.trial_id === trialId) ?? null;
      renderFronts();
      renderPortfolioTable();
    });
  }
}

function renderPortfolioTable(): void {
  const table = el<HTMLTableElement>("portfolio-table");
  const body = table.querySelector("tbody")!;
  body.innerHTML = "";
  const point = selectedFrontPoint;
  if (!point) {
    el<HTMLDivElement>("portfolio-panel").hidden = true;
    return;
  }
  el<HTMLDivElement>("portfolio-panel").hidden = false;
  el<HTMLSpanElement>("portfolio-meta").textContent =
    `trial ${point.trial_id}: likelihood ${point.likelihood.toFixed(4)}, ` +
    `impact ${point.impact.toFixed(4)}, availability ${point.availability.toFixed(4)}`;
  for (const row of portfolioRows(point)) {
    const tr = document.createElement("tr");
    tr.innerHTML = `<td>${row.vulnId}</td><td>${row.mitigation.toFixed(4)}</td>`;
    body.appendChild(tr);
  }
}

/** Write the selected portfolio back into the model as mitigation edits. */
async function applyPortfolioBack(): Promise<void> {
  if (!model || !selectedFrontPoint) return;
  try {
    let payload: ModelPayload | null = null;
    for (const row of portfolioRows(selectedFrontPoint)) {
      payload = await client.patchNode(model.model_id, row.vulnId, {
        attrs: { mitigation_prob: row.mitigation },
      });
    }
    if (payload) {
      model = payload;
      session.loadModel(payload);
      renderGraph();
      renderNodePanel();
      renderRiskGauge();
      renderFronts();
    }
    banner("");
  } catch (err) {
    banner(`apply failed: ${describeError(err)}`);
  }
}

function wireOptimisation(): void {
  el<HTMLButtonElement>("run-optimise").addEventListener("click", () => {
    if (!model) return;
    const trials = Number(el<HTMLInputElement>("trial-count").value) || 100;
    const seed = Number(el<HTMLInputElement>("run-seed").value) || 0;
    const progress = el<HTMLProgressElement>("job-progress");
    const status = el<HTMLSpanElement>("job-status");
    void (async () => {
      try {
        const submitted = await client.optimise(model!.model_id, {
          trial_count: trials,
          seed,
          revision: session.revision,
        });
        session.jobSubmitted(submitted);
        status.textContent = `job ${submitted.job_id}: ${submitted.state}`;
        const finished = await client.waitForJob(submitted.job_id, (d) => {
          progress.max = d.progress.total || trials;
          progress.value = d.progress.completed;
          status.textContent = `job ${d.job_id}: ${d.state}`;
        });
        session.jobSettled(finished);
        if (finished.state === "failed") {
          banner(`optimisation failed: ${finished.error ?? "unknown reason"}`);
          return;
        }
        const front = await client.getFront(finished.job_id);
        session.cacheFront(front);
        selectedFrontPoint = front.top;
        renderFronts();
        renderPortfolioTable();
        banner("");
      } catch (err) {
        banner(describeError(err));
      }
    })();
  });
  el<HTMLButtonElement>("apply-portfolio").addEventListener("click", () => {
    void applyPortfolioBack();
  });
  el<HTMLButtonElement>("run-heuristics").addEventListener("click", () => {
    if (!model) return;
    void (async () => {
      try {
        const report = await client.heuristics(model!.model_id, {
          runs: Number(el<HTMLInputElement>("heuristic-runs").value) || 5,
          trials_per_run: Number(el<HTMLInputElement>("heuristic-trials").value) || 500,
        });
        session.cacheRanks(report);
        el<HTMLDivElement>("rank-chart").innerHTML = renderRankBars(report);
      } catch (err) {
        banner(describeError(err));
      }
    })();
  });
}

// --- boot -----------------------------------------------------------------------

function wireChrome(): void {
  const baseInput = el<HTMLInputElement>("base-url");
  baseInput.value = client.baseUrl;
  baseInput.addEventListener("change", () => {
    client = new ApiClient(baseInput.value);
    localStorage.setItem("cpsdss.baseUrl", baseInput.value);
  });
  el<HTMLButtonElement>("load-model").addEventListener("click", () => {
    const modelId = el<HTMLInputElement>("model-id").value.trim();
    if (modelId) void loadModel(modelId);
  });
  el<HTMLInputElement>("upload-file").addEventListener("change", (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    void file.text().then(uploadFixture);
  });
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  wireChrome();
  wireSteering();
  wireOptimisation();
}
