/** Typed client for the incident-mitigation service. All engine math stays
 * server-side; the console only issues these calls and renders the results. */

export type NodeKind = "asset" | "vulnerability" | "hazard";

export interface NodeDoc {
  id: string;
  kind: NodeKind;
  label: string;
  attrs: Record<string, unknown>;
}

export interface ModelDocument {
  nodes: NodeDoc[];
  edges: [string, string][];
  attack_feasibility: number;
  evaluation_date: string;
}

export interface ModelPayload {
  model_id: string;
  revision: number;
  evidence: Record<string, number>;
  document: ModelDocument;
}

export interface RiskSummary {
  attack_likelihood: number;
  severe_impact: number;
  composite_risk: number;
}

export interface InferenceResult {
  model_id: string;
  revision: number;
  goal: string;
  evidence: Record<string, number>;
  risk: RiskSummary;
  marginals: Record<string, [number, number]>;
  success_state: number;
}

export interface JobDescriptor {
  job_id: string;
  model_id: string;
  revision: number;
  state: "queued" | "running" | "done" | "failed";
  progress: { completed: number; total: number };
  created_at: string;
  finished_at: string | null;
  error: string | null;
  config: Record<string, unknown>;
}

export interface FrontPoint {
  trial_id: number;
  likelihood: number;
  impact: number;
  availability: number;
  portfolio: Record<string, number>;
}

export interface FrontExport {
  job_id: string;
  model_id: string;
  revision: number;
  run_seed: number;
  trial_count: number;
  trials: FrontPoint[];
  top: FrontPoint;
}

export interface RankReport {
  model_id: string;
  revision: number;
  average_ranks: Record<string, number>;
  run_count: number;
  trials_per_run: number;
  top_portfolios: { trial_id: number; portfolio: Record<string, number> }[];
}

export interface OptimiseRequest {
  trial_count: number;
  seed?: number;
  sampler?: "uniform" | "adaptive";
  evidence?: Record<string, number | null>;
  workers?: number;
  revision?: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
    message?: string,
  ) {
    super(message ?? `request failed with status ${status}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, null, `server unreachable: ${String(err)}`);
  }
  if (!response.ok) {
    let detail: unknown = null;
    try {
      detail = (await response.json()).detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

function jsonInit(method: string, body: unknown): RequestInit {
  return {
    method,
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  };
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  health(): Promise<{ status: string }> {
    return request(this.url("/health"));
  }

  createModel(document: unknown): Promise<ModelPayload> {
    return request(this.url("/models"), jsonInit("POST", document));
  }

  getModel(modelId: string): Promise<ModelPayload> {
    return request(this.url(`/models/${encodeURIComponent(modelId)}`));
  }

  /** Node attribute patch and/or evidence set/clear; bumps the revision. */
  patchNode(
    modelId: string,
    nodeId: string,
    body: { attrs?: Record<string, unknown>; evidence?: number | null },
  ): Promise<ModelPayload> {
    return request(
      this.url(`/models/${encodeURIComponent(modelId)}/nodes/${encodeURIComponent(nodeId)}`),
      jsonInit("PATCH", body),
    );
  }

  patchModel(
    modelId: string,
    body: { attack_feasibility?: number; evaluation_date?: string },
  ): Promise<ModelPayload> {
    return request(this.url(`/models/${encodeURIComponent(modelId)}`), jsonInit("PATCH", body));
  }

  infer(
    modelId: string,
    body: {
      evidence?: Record<string, number | null>;
      portfolio?: Record<string, number>;
      revision?: number;
    } = {},
  ): Promise<InferenceResult> {
    return request(
      this.url(`/models/${encodeURIComponent(modelId)}/inference`),
      jsonInit("POST", body),
    );
  }

  optimise(modelId: string, body: OptimiseRequest): Promise<JobDescriptor> {
    return request(
      this.url(`/models/${encodeURIComponent(modelId)}/optimise`),
      jsonInit("POST", body),
    );
  }

  getJob(jobId: string): Promise<JobDescriptor> {
    return request(this.url(`/jobs/${encodeURIComponent(jobId)}`));
  }

  getFront(jobId: string): Promise<FrontExport> {
    return request(this.url(`/jobs/${encodeURIComponent(jobId)}/front?format=json`));
  }

  heuristics(
    modelId: string,
    body: { runs: number; trials_per_run: number; seed?: number; revision?: number },
  ): Promise<RankReport> {
    return request(
      this.url(`/models/${encodeURIComponent(modelId)}/heuristics`),
      jsonInit("POST", body),
    );
  }

  /** Poll a job until it leaves the queue; reports progress along the way. */
  async waitForJob(
    jobId: string,
    onProgress?: (descriptor: JobDescriptor) => void,
    intervalMs = 250,
    timeoutMs = 120_000,
  ): Promise<JobDescriptor> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const descriptor = await this.getJob(jobId);
      onProgress?.(descriptor);
      if (descriptor.state === "done" || descriptor.state === "failed") {
        return descriptor;
      }
      if (Date.now() > deadline) {
        throw new ApiError(0, null, `job ${jobId} timed out after ${timeoutMs}ms`);
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }
}
