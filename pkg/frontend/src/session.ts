/** Client-side session state: which model is active, what the server's
 * revision is, and which cached results are stale relative to it.
 *
 * Every cached result carries the revision it was computed against. The
 * server is the source of truth; after any PATCH bumps the revision, older
 * results must be visibly flagged rather than silently shown. */

import type {
  FrontExport,
  InferenceResult,
  JobDescriptor,
  ModelPayload,
  RankReport,
  RiskSummary,
} from "./api.js";

export interface Tagged<T> {
  revision: number;
  value: T;
}

export class Session {
  modelId: string | null = null;
  revision = 0;
  evidence: Record<string, number> = {};
  selectedNode: string | null = null;
  pendingJobs = new Set<string>();

  private riskCache: Tagged<RiskSummary> | null = null;
  private frontCaches = new Map<string, Tagged<FrontExport>>();
  private rankCache: Tagged<RankReport> | null = null;

  loadModel(payload: ModelPayload): void {
    if (this.modelId !== payload.model_id) {
      // switching models invalidates everything from the previous one
      this.riskCache = null;
      this.frontCaches.clear();
      this.rankCache = null;
      this.pendingJobs.clear();
      this.selectedNode = null;
    }
    this.modelId = payload.model_id;
    this.noteRevision(payload.revision);
    this.evidence = { ...payload.evidence };
  }

  /** Record the latest revision seen in any server response. */
  noteRevision(revision: number): void {
    if (revision > this.revision) {
      this.revision = revision;
    }
  }

  cacheRisk(result: InferenceResult): void {
    this.noteRevision(result.revision);
    this.riskCache = { revision: result.revision, value: result.risk };
    this.evidence = { ...result.evidence };
  }

  get risk(): Tagged<RiskSummary> | null {
    return this.riskCache;
  }

  /** True when the cached risk gauge lags the server revision. */
  riskIsStale(): boolean {
    return this.riskCache !== null && this.riskCache.revision < this.revision;
  }

  jobSubmitted(descriptor: JobDescriptor): void {
    this.pendingJobs.add(descriptor.job_id);
  }

  jobSettled(descriptor: JobDescriptor): void {
    this.pendingJobs.delete(descriptor.job_id);
  }

  cacheFront(front: FrontExport): void {
    this.frontCaches.set(front.job_id, { revision: front.revision, value: front });
  }

  fronts(): Tagged<FrontExport>[] {
    return [...this.frontCaches.values()];
  }

  front(jobId: string): Tagged<FrontExport> | null {
    return this.frontCaches.get(jobId) ?? null;
  }

  frontIsStale(jobId: string): boolean {
    const cached = this.frontCaches.get(jobId);
    return cached !== undefined && cached.revision < this.revision;
  }

  cacheRanks(report: RankReport): void {
    this.rankCache = { revision: report.revision, value: report };
  }

  get ranks(): Tagged<RankReport> | null {
    return this.rankCache;
  }

  ranksAreStale(): boolean {
    return this.rankCache !== null && this.rankCache.revision < this.revision;
  }
}
