"""HTTP front end: long searches run as background jobs, everything else is synchronous."""
from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException

from ..corruptions import build_corrupted_sets, corruption_report, save_corrupted_sets
from ..engine import Archive, DataBundle, EngineConfig, evaluate_candidate, run, select_top_k, train_candidate
from ..errors import FlatSearchError
from ..nn.train import eval_error
from ..objectives import EvalRecord
from ..reporting import report
from .schemas import (CorruptRequest, CorruptResponse, EvaluateRequest, Job, Record, ReportRequest,
                      ReportResponse, SearchRequest, SearchResult)


def _record(r: EvalRecord) -> Record:
    d = asdict(r)
    d["gene"] = list(r.gene)
    return Record(**d)


def search_config(req: SearchRequest) -> EngineConfig:
    cfg = EngineConfig.from_dict(req.config)
    if req.seed is not None:
        cfg = replace(cfg, master_seed=req.seed)
    if req.optimizer is not None:
        cfg = replace(cfg, train=replace(cfg.train, optimizer=req.optimizer))
    fom = {k: v for k, v in (("alpha", req.alpha), ("sigma", req.sigma),
                             ("param_limit", req.param_limit), ("penalty", req.penalty)) if v is not None}
    return replace(cfg, fom=replace(cfg.fom, **fom)) if fom else cfg


def build_report(req: ReportRequest) -> ReportResponse:
    cfg = EngineConfig.from_dict(req.config)
    records = Archive.read(req.archive)
    top = select_top_k(records, cfg.fom, cfg.top_k, cfg.feasible_first)
    names = [f"top{i + 1}" for i in range(len(top))]
    reports = []
    if req.types:
        data = DataBundle(cfg.data, cfg.space.in_channels)
        for name, rec in zip(names, top):
            config, w = train_candidate(rec.gene, cfg, rec.seed, data)
            test = data.get("test", config.input_resolution)
            sets = build_corrupted_sets(test, req.types, req.seed)
            reports.append(corruption_report(w, config, sets, eval_error(w, config, test), name, cfg.data.kind))
    paths = report(top, reports, req.out, cfg.space, names)
    return ReportResponse(files={k: str(v) for k, v in paths.items()}, models=[_record(r) for r in top])


class JobManager:
    def __init__(self):
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=1)

    def submit(self, cfg: EngineConfig, resume: bool) -> Job:
        job = Job(id=uuid.uuid4().hex, state="queued")
        with self.lock:
            self.jobs[job.id] = job
        self.pool.submit(self._run, job.id, cfg, resume)
        return job

    def _update(self, job_id: str, **changes) -> None:
        with self.lock:
            self.jobs[job_id] = self.jobs[job_id].model_copy(update=changes)

    def _run(self, job_id: str, cfg: EngineConfig, resume: bool) -> None:
        self._update(job_id, state="running")
        try:
            top, archive = run(cfg, resume=resume,
                               on_iteration=lambda k, a: self._update(job_id, archive_size=len(a)))
        except Exception as exc:  # reported through the job, not raised into the pool
            self._update(job_id, state="failed", error=f"{type(exc).__name__}: {exc}")
            return
        result = SearchResult(top_k=[_record(r) for r in top], archive_size=len(archive),
                              archive_path=cfg.archive_path, log_path=cfg.log_path)
        self._update(job_id, state="done", archive_size=len(archive), result=result)

    def get(self, job_id: str) -> Job:
        with self.lock:
            if job_id not in self.jobs:
                raise HTTPException(404, f"no job {job_id}")
            return self.jobs[job_id]


def create_app() -> FastAPI:
    app = FastAPI(title="flatsearch")
    jobs = JobManager()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/search", response_model=Job, status_code=202)
    def search(req: SearchRequest):
        try:
            cfg = search_config(req)
        except (TypeError, ValueError) as exc:
            raise HTTPException(422, str(exc))
        return jobs.submit(cfg, req.resume)

    @app.get("/jobs/{job_id}", response_model=Job)
    def job(job_id: str):
        return jobs.get(job_id)

    @app.post("/evaluate", response_model=Record)
    def evaluate(req: EvaluateRequest):
        try:
            cfg = EngineConfig.from_dict(req.config)
            return _record(evaluate_candidate(req.gene, cfg, req.seed))
        except (TypeError, ValueError) as exc:
            raise HTTPException(422, str(exc))

    @app.post("/corrupt", response_model=CorruptResponse)
    def corrupt(req: CorruptRequest):
        try:
            cfg = EngineConfig.from_dict(req.config)
            resolution = req.resolution or cfg.space.resolution_choices[-1]
            test = DataBundle(cfg.data, cfg.space.in_channels).get("test", resolution)
            sets = build_corrupted_sets(test, req.types, req.seed)
        except (TypeError, ValueError, KeyError) as exc:
            raise HTTPException(422, str(exc))
        return CorruptResponse(files=[str(p) for p in save_corrupted_sets(sets, Path(req.out))])

    @app.post("/report", response_model=ReportResponse)
    def make_report(req: ReportRequest):
        if not Path(req.archive).exists():
            raise HTTPException(404, f"no archive at {req.archive}")
        try:
            return build_report(req)
        except (FlatSearchError, TypeError, ValueError, KeyError) as exc:
            raise HTTPException(422, str(exc))

    return app


app = create_app()
