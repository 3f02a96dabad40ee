"""Long-running HTTP service: model store, inference, and async optimisation jobs.

State is kept in memory behind a lock and journaled to an append-only
directory layout (``models/{id}/rev-{n}.json``, ``jobs/{id}/``), so every
revision and every run result stays inspectable on disk. Optimisation jobs
execute on a bounded worker pool and pin the model revision they were
created against.
"""

from __future__ import annotations

import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .impact import Portfolio
from .inference import query_posterior, posterior_risk
from .model import (
    BnModel,
    EvidenceSet,
    ModelError,
    UnknownNodeError,
    ValidationError,
    parse_model,
    serialize_model,
    update_attribute,
    update_model_attribute,
    validate_evidence,
)
from .optimise import (
    OptimisationConfig,
    export_front_csv,
    run_heuristic_analysis,
    run_optimisation,
    select_top_portfolio,
)
from .scoring import EpssSnapshot

JOB_STATES = ("queued", "running", "done", "failed")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class StoredModel:
    model_id: str
    model: BnModel
    revision: int
    evidence: EvidenceSet = field(default_factory=dict)


@dataclass
class JobDescriptor:
    job_id: str
    model_id: str
    revision: int
    config: dict[str, Any]
    state: str = "queued"
    progress_done: int = 0
    progress_total: int = 0
    created_at: str = field(default_factory=_now)
    finished_at: str | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "model_id": self.model_id,
            "revision": self.revision,
            "config": self.config,
            "state": self.state,
            "progress": {
                "completed": self.progress_done,
                "total": self.progress_total,
            },
            "created_at": self.created_at,
            "finished_at": self.finished_at,
            "error": self.error,
        }


class ModelStore:
    """Single-writer, multi-reader model storage with revision journaling."""

    def __init__(self, root: Path | None = None):
        self._lock = threading.RLock()
        self._models: dict[str, StoredModel] = {}
        self._root = root
        if root is not None:
            (root / "models").mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self) -> None:
        for model_dir in sorted((self._root / "models").glob("*")):
            revs = sorted(model_dir.glob("rev-*.json"))
            if not revs:
                continue
            payload = json.loads(revs[-1].read_text())
            stored = StoredModel(
                model_id=model_dir.name,
                model=parse_model(payload["document"]),
                revision=int(payload["revision"]),
                evidence={k: int(v) for k, v in payload.get("evidence", {}).items()},
            )
            self._models[stored.model_id] = stored

    def _persist(self, stored: StoredModel) -> None:
        if self._root is None:
            return
        model_dir = self._root / "models" / stored.model_id
        model_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "revision": stored.revision,
            "document": serialize_model(stored.model),
            "evidence": stored.evidence,
        }
        (model_dir / f"rev-{stored.revision:06d}.json").write_text(
            json.dumps(payload, indent=2))

    def create(self, document: Mapping[str, Any] | str) -> StoredModel:
        model = parse_model(document)
        with self._lock:
            model_id = f"m-{uuid.uuid4().hex[:12]}"
            stored = StoredModel(model_id=model_id, model=model, revision=1)
            self._models[model_id] = stored
            self._persist(stored)
            return stored

    def get(self, model_id: str) -> StoredModel:
        with self._lock:
            stored = self._models.get(model_id)
            if stored is None:
                raise KeyError(model_id)
            return StoredModel(stored.model_id, stored.model, stored.revision,
                               dict(stored.evidence))

    def patch_node(
        self,
        model_id: str,
        node_id: str,
        attrs: Mapping[str, Any] | None,
        evidence: int | None,
        clear_evidence: bool,
    ) -> StoredModel:
        with self._lock:
            stored = self._models.get(model_id)
            if stored is None:
                raise KeyError(model_id)
            model = stored.model
            new_evidence = dict(stored.evidence)
            if attrs:
                model = update_attribute(model, node_id, attrs)
            if clear_evidence:
                new_evidence.pop(node_id, None)
            elif evidence is not None:
                validate_evidence(model, {node_id: evidence})
                new_evidence[node_id] = int(evidence)
            elif node_id not in model.nodes:
                raise UnknownNodeError(node_id)
            updated = StoredModel(model_id, model, stored.revision + 1, new_evidence)
            self._models[model_id] = updated
            self._persist(updated)
            return updated

    def patch_model(self, model_id: str, fields: Mapping[str, Any]) -> StoredModel:
        with self._lock:
            stored = self._models.get(model_id)
            if stored is None:
                raise KeyError(model_id)
            model = update_model_attribute(
                stored.model,
                attack_feasibility=fields.get("attack_feasibility"),
                evaluation_date=fields.get("evaluation_date"),
            )
            updated = StoredModel(model_id, model, stored.revision + 1, dict(stored.evidence))
            self._models[model_id] = updated
            self._persist(updated)
            return updated


class JobManager:
    """Bounded-pool executor for optimisation jobs with polling descriptors."""

    def __init__(self, root: Path | None, workers: int = 2):
        self._lock = threading.RLock()
        self._jobs: dict[str, JobDescriptor] = {}
        self._results: dict[str, Any] = {}
        self._root = root
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="job")
        if root is not None:
            (root / "jobs").mkdir(parents=True, exist_ok=True)
            self._recover()

    def _recover(self) -> None:
        for job_dir in sorted((self._root / "jobs").glob("*")):
            desc_path = job_dir / "descriptor.json"
            if not desc_path.exists():
                continue
            raw = json.loads(desc_path.read_text())
            desc = JobDescriptor(
                job_id=raw["job_id"], model_id=raw["model_id"], revision=raw["revision"],
                config=raw["config"], state=raw["state"],
                progress_done=raw["progress"]["completed"],
                progress_total=raw["progress"]["total"],
                created_at=raw["created_at"], finished_at=raw["finished_at"],
                error=raw["error"])
            if desc.state in ("queued", "running"):
                # the previous process died mid-job; never resurrect as running
                desc.state = "failed"
                desc.error = "service stopped before the job finished"
                desc.finished_at = _now()
            self._jobs[desc.job_id] = desc
            self._persist(desc)

    def _persist(self, desc: JobDescriptor, front_csv: str | None = None,
                 trials_csv: str | None = None) -> None:
        if self._root is None:
            return
        job_dir = self._root / "jobs" / desc.job_id
        job_dir.mkdir(parents=True, exist_ok=True)
        (job_dir / "descriptor.json").write_text(json.dumps(desc.to_dict(), indent=2))
        if front_csv is not None:
            (job_dir / "front.csv").write_text(front_csv)
        if trials_csv is not None:
            (job_dir / "trials.csv").write_text(trials_csv)

    def submit(
        self,
        stored: StoredModel,
        config: OptimisationConfig,
        snapshot: EpssSnapshot | None,
        mode: str,
        success_state: int,
    ) -> JobDescriptor:
        desc = JobDescriptor(
            job_id=f"j-{uuid.uuid4().hex[:12]}",
            model_id=stored.model_id,
            revision=stored.revision,
            config={
                "trial_count": config.trial_count,
                "seed": config.seed,
                "sampler": config.sampler,
                "evidence": dict(config.evidence),
                "workers": config.workers,
            },
            progress_total=config.trial_count,
        )
        with self._lock:
            self._jobs[desc.job_id] = desc
            self._persist(desc)
        self._pool.submit(self._run, desc, stored.model, config, snapshot, mode, success_state)
        return desc

    def _run(
        self,
        desc: JobDescriptor,
        model: BnModel,
        config: OptimisationConfig,
        snapshot: EpssSnapshot | None,
        mode: str,
        success_state: int,
    ) -> None:
        with self._lock:
            desc.state = "running"
            self._persist(desc)

        def on_progress(done: int, total: int) -> None:
            with self._lock:
                desc.progress_done = max(desc.progress_done, done)
                desc.progress_total = total
                self._persist(desc)

        try:
            trials, front = run_optimisation(
                model, config, snapshot=snapshot, mode=mode,
                success_state=success_state, progress=on_progress)
        except Exception as exc:  # surface the reason to pollers
            with self._lock:
                desc.state = "failed"
                desc.error = str(exc)
                desc.finished_at = _now()
                self._persist(desc)
            return
        front_csv = export_front_csv(front)
        trials_csv = _trials_csv(trials)
        with self._lock:
            desc.state = "done"
            desc.progress_done = desc.progress_total
            desc.finished_at = _now()
            self._results[desc.job_id] = (trials, front)
            self._persist(desc, front_csv=front_csv, trials_csv=trials_csv)

    def get(self, job_id: str) -> JobDescriptor:
        with self._lock:
            desc = self._jobs.get(job_id)
            if desc is None:
                raise KeyError(job_id)
            return desc

    def front(self, job_id: str):
        desc = self.get(job_id)
        if desc.state != "done":
            return desc, None
        with self._lock:
            result = self._results.get(job_id)
        if result is None and self._root is not None:
            from .optimise import parse_front_csv

            path = self._root / "jobs" / job_id / "front.csv"
            if path.exists():
                return desc, parse_front_csv(path.read_text())
        return desc, (result[1] if result else None)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)
        with self._lock:
            for desc in self._jobs.values():
                if desc.state in ("queued", "running"):
                    desc.state = "failed"
                    desc.error = "service shut down before the job finished"
                    desc.finished_at = _now()
                    self._persist(desc)


def _trials_csv(trials) -> str:
    if not trials:
        return ""
    vuln_ids = trials[0].portfolio.ids()
    lines = [",".join(("trial_id", "likelihood", "impact", "availability", *vuln_ids))]
    for t in trials:
        lik, imp, av = t.objectives
        row = [str(t.trial_id), repr(lik), repr(imp), repr(av)]
        row.extend(repr(v) for v in t.portfolio.values())
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _merge_evidence(stored: EvidenceSet, override: Mapping[str, Any] | None) -> EvidenceSet:
    merged = dict(stored)
    for key, value in (override or {}).items():
        if value is None:
            merged.pop(key, None)
        else:
            merged[key] = int(value)
    return merged


def create_app(
    data_dir: str | Path | None = None,
    snapshot_path: str | Path | None = None,
    job_workers: int = 2,
) -> FastAPI:
    root = Path(data_dir) if data_dir is not None else None
    snapshot = EpssSnapshot.from_csv(snapshot_path) if snapshot_path else EpssSnapshot.empty()
    store = ModelStore(root)
    jobs = JobManager(root, workers=job_workers)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        jobs.shutdown()

    app = FastAPI(title="cpsdss", version="0.1.0", lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    app.state.store = store
    app.state.jobs = jobs

    def get_stored(model_id: str) -> StoredModel:
        try:
            return store.get(model_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}")

    def check_revision(stored: StoredModel, body: Mapping[str, Any]) -> None:
        pinned = body.get("revision")
        if pinned is not None and int(pinned) != stored.revision:
            raise HTTPException(
                status_code=409,
                detail=f"model revision changed: expected {pinned}, now {stored.revision}")

    def model_payload(stored: StoredModel) -> dict[str, Any]:
        return {
            "model_id": stored.model_id,
            "revision": stored.revision,
            "evidence": stored.evidence,
            "document": serialize_model(stored.model),
        }

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/models", status_code=201)
    async def create_model(request: Request) -> dict[str, Any]:
        body = await request.json()
        try:
            stored = store.create(body)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=[str(d) for d in exc.diagnostics])
        except ModelError as exc:
            raise HTTPException(status_code=400, detail=[str(exc)])
        return model_payload(stored)

    @app.get("/models/{model_id}")
    def get_model(model_id: str) -> dict[str, Any]:
        return model_payload(get_stored(model_id))

    @app.patch("/models/{model_id}")
    async def patch_model(model_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        get_stored(model_id)
        try:
            stored = store.patch_model(model_id, body)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=[str(d) for d in exc.diagnostics])
        except ModelError as exc:
            raise HTTPException(status_code=400, detail=[str(exc)])
        return model_payload(stored)

    @app.patch("/models/{model_id}/nodes/{node_id}")
    async def patch_node(model_id: str, node_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        get_stored(model_id)
        unknown = set(body) - {"attrs", "evidence"}
        if unknown:
            raise HTTPException(status_code=400,
                                detail=[f"unknown patch keys {sorted(unknown)}"])
        clear = "evidence" in body and body["evidence"] is None
        try:
            stored = store.patch_node(
                model_id, node_id,
                attrs=body.get("attrs"),
                evidence=body.get("evidence"),
                clear_evidence=clear)
        except UnknownNodeError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=[str(d) for d in exc.diagnostics])
        except ModelError as exc:
            raise HTTPException(status_code=400, detail=[str(exc)])
        return model_payload(stored)

    @app.post("/models/{model_id}/inference")
    async def inference(model_id: str, request: Request) -> dict[str, Any]:
        body = await request.json() if await request.body() else {}
        stored = get_stored(model_id)
        check_revision(stored, body)
        evidence = _merge_evidence(stored.evidence, body.get("evidence"))
        mode = body.get("mode", "epss-direct")
        success_state = int(body.get("success_state", 1))
        try:
            if body.get("portfolio"):
                portfolio = Portfolio.from_mapping(stored.model, body["portfolio"])
            else:
                portfolio = Portfolio.from_model(stored.model)
            summary = posterior_risk(
                stored.model, portfolio, evidence, snapshot=snapshot,
                mode=mode, success_state=success_state)
            goal = stored.model.goal_id()
            marginals = {
                dim: query_posterior(stored.model, portfolio, evidence, dim, goal,
                                     snapshot=snapshot, mode=mode).marginal
                for dim in ("exposure", "impact")
            }
        except ModelError as exc:
            raise HTTPException(status_code=400, detail=[str(exc)])
        return {
            "model_id": model_id,
            "revision": stored.revision,
            "goal": stored.model.goal_id(),
            "evidence": evidence,
            "risk": {
                "attack_likelihood": summary.attack_likelihood,
                "severe_impact": summary.severe_impact,
                "composite_risk": summary.composite_risk,
            },
            "marginals": marginals,
            "success_state": success_state,
        }

    @app.post("/models/{model_id}/optimise", status_code=202)
    async def optimise(model_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        stored = get_stored(model_id)
        check_revision(stored, body)
        try:
            config = OptimisationConfig(
                trial_count=int(body.get("trial_count", 1000)),
                seed=int(body.get("seed", 0)),
                sampler=body.get("sampler", "uniform"),
                evidence=_merge_evidence(stored.evidence, body.get("evidence")),
                workers=int(body.get("workers", 1)),
            )
            validate_evidence(stored.model, config.evidence)
        except ModelError as exc:
            raise HTTPException(status_code=400, detail=[str(exc)])
        mode = body.get("mode", "epss-direct")
        success_state = int(body.get("success_state", 1))
        desc = jobs.submit(stored, config, snapshot, mode, success_state)
        return desc.to_dict()

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str) -> dict[str, Any]:
        try:
            return jobs.get(job_id).to_dict()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")

    @app.get("/jobs/{job_id}/front")
    def get_front(job_id: str, format: str = "csv"):
        try:
            desc, front = jobs.front(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        if front is None:
            raise HTTPException(
                status_code=409,
                detail=f"job {job_id} is {desc.state}; front available once done")
        if format == "json":
            return {
                "job_id": job_id,
                "model_id": desc.model_id,
                "revision": desc.revision,
                "run_seed": front.run_seed,
                "trial_count": front.trial_count,
                "trials": [
                    {
                        "trial_id": t.trial_id,
                        "likelihood": t.objectives[0],
                        "impact": t.objectives[1],
                        "availability": t.objectives[2],
                        "portfolio": t.portfolio.as_dict(),
                    }
                    for t in front.trials
                ],
                "top": _top_payload(front),
            }
        return Response(content=export_front_csv(front), media_type="text/csv")

    @app.post("/models/{model_id}/heuristics")
    async def heuristics(model_id: str, request: Request) -> dict[str, Any]:
        body = await request.json()
        stored = get_stored(model_id)
        check_revision(stored, body)
        runs = int(body.get("runs", 5))
        trials = int(body.get("trials_per_run", 500))
        try:
            _, tops, report = run_heuristic_analysis(
                stored.model, runs=runs, trials_per_run=trials,
                seed=int(body.get("seed", 0)),
                sampler=body.get("sampler", "uniform"),
                evidence=_merge_evidence(stored.evidence, body.get("evidence")),
                snapshot=snapshot,
                workers=int(body.get("workers", 1)))
        except ModelError as exc:
            raise HTTPException(status_code=400, detail=[str(exc)])
        return {
            "model_id": model_id,
            "revision": stored.revision,
            "average_ranks": report.average_ranks,
            "run_count": report.run_count,
            "trials_per_run": report.trials_per_run,
            "top_portfolios": [
                {"trial_id": t.trial_id, "portfolio": t.portfolio.as_dict()}
                for t in tops
            ],
        }

    return app


def _top_payload(front) -> dict[str, Any]:
    top = select_top_portfolio(front)
    return {
        "trial_id": top.trial_id,
        "likelihood": top.objectives[0],
        "impact": top.objectives[1],
        "availability": top.objectives[2],
        "portfolio": top.portfolio.as_dict(),
    }
