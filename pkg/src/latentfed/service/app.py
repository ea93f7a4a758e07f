"""FastAPI application wrapping the experiment runner.

All experiment directories live under a single workspace directory; run
directories referenced by clients are resolved against it and may not
escape it.
"""
from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from ..errors import ConfigError, LatentFedError
from ..experiments import (
    apply_overrides,
    config_to_dict,
    load_records,
    parse_config_dict,
    run_experiment,
    summarize,
)
from ..presets import get_preset, preset_names
from .jobs import DONE, JobStore
from .schemas import (
    ExperimentRequest,
    Health,
    JobInfo,
    JobList,
    PresetInfo,
    PresetList,
    RecordsResponse,
    SummarizeRequest,
)


def _job_info(job) -> JobInfo:
    return JobInfo(
        job_id=job.job_id,
        name=job.name,
        status=job.status,
        out_dir=str(job.out_dir),
        error=job.error,
        summary=job.summary,
    )


def create_app(workspace: Path) -> FastAPI:
    workspace = Path(workspace).resolve()
    workspace.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="latentfed", version="0.1.0")
    store = JobStore()

    def resolve_dir(name: str) -> Path:
        path = (workspace / name).resolve()
        if workspace != path and workspace not in path.parents:
            raise HTTPException(status_code=400, detail=f"{name!r} escapes the workspace")
        return path

    @app.get("/health", response_model=Health)
    def health() -> Health:
        return Health()

    @app.get("/presets", response_model=PresetList)
    def list_presets() -> PresetList:
        return PresetList(presets=preset_names())

    @app.get("/presets/{name}", response_model=PresetInfo)
    def preset_detail(name: str) -> PresetInfo:
        try:
            cfg = get_preset(name)
        except ConfigError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return PresetInfo(name=name, config=config_to_dict(cfg))

    @app.post("/experiments", response_model=JobInfo, status_code=202)
    def submit_experiment(request: ExperimentRequest) -> JobInfo:
        try:
            if request.preset is not None:
                cfg = get_preset(request.preset)
            else:
                cfg = parse_config_dict(request.config)
            cfg = apply_overrides(cfg, request.overrides.as_dict())
        except LatentFedError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        out_dir = resolve_dir(request.out_name or cfg.name)
        job = store.submit(cfg.name, out_dir, lambda: run_experiment(cfg, out_dir))
        return _job_info(job)

    @app.get("/experiments", response_model=JobList)
    def list_jobs() -> JobList:
        return JobList(jobs=[_job_info(j) for j in store.all()])

    @app.get("/experiments/{job_id}", response_model=JobInfo)
    def job_detail(job_id: str) -> JobInfo:
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        return _job_info(job)

    @app.get("/experiments/{job_id}/records", response_model=RecordsResponse)
    def job_records(job_id: str, seed: int | None = None,
                    offset: int = 0, limit: int = 1000) -> RecordsResponse:
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        if job.status != DONE:
            raise HTTPException(status_code=409, detail=f"job is {job.status}")
        seed_dirs = sorted(job.out_dir.glob("seed_*"))
        if not seed_dirs:
            raise HTTPException(status_code=404, detail="no per-seed records found")
        if seed is None:
            chosen = seed_dirs[0]
        else:
            chosen = job.out_dir / f"seed_{seed}"
            if not chosen.exists():
                raise HTTPException(status_code=404, detail=f"no records for seed {seed}")
        records = load_records(chosen / "records.jsonl")
        window = records[offset:offset + limit]
        return RecordsResponse(
            job_id=job_id,
            seed=int(chosen.name.removeprefix("seed_")),
            total=len(records),
            offset=offset,
            records=window,
        )

    @app.get("/experiments/{job_id}/ledger", response_class=PlainTextResponse)
    def job_ledger(job_id: str, seed: int | None = None) -> str:
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        if job.status != DONE:
            raise HTTPException(status_code=409, detail=f"job is {job.status}")
        seed_dirs = sorted(job.out_dir.glob("seed_*"))
        if not seed_dirs:
            raise HTTPException(status_code=404, detail="no per-seed ledgers found")
        chosen = seed_dirs[0] if seed is None else job.out_dir / f"seed_{seed}"
        path = chosen / "ledger.csv"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no ledger for seed {seed}")
        return path.read_text()

    @app.post("/summarize")
    def summarize_runs(request: SummarizeRequest) -> dict:
        dirs = [resolve_dir(d) for d in request.run_dirs]
        try:
            return summarize(dirs)
        except LatentFedError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    return app
