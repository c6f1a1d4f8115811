"""FastAPI service wrapping the pricing library.

Quick operations (closed-form prices, greeks from a checkpoint, Feller
check, finite-difference solves, comparisons) run synchronously; training
runs as background jobs with a polling endpoint since they take minutes to
hours.  All file artifacts live under the service's working directory, and
checkpoint/surface references in requests are resolved against it.
"""

from __future__ import annotations

import itertools
import threading
import traceback
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import metrics, models, reference, run
from ..errors import ConfigError, ContractError, NumericError, SchemaError, XvaPinnError
from ..network import load_checkpoint
from . import schemas

# FD requests are synchronous; cap the work one request may ask for
MAX_FD_CELLS = 30_000_000


class JobRegistry:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}
        self._ids = itertools.count(1)

    def create(self, out_dir):
        with self._lock:
            job_id = f"train-{next(self._ids)}"
            self._jobs[job_id] = {
                "state": "queued",
                "detail": None,
                "output_dir": str(out_dir),
                "summary": None,
            }
        return job_id

    def update(self, job_id, **fields):
        with self._lock:
            self._jobs[job_id].update(fields)

    def get(self, job_id):
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job is not None else None


def _http_error(exc):
    if isinstance(exc, (ConfigError, SchemaError, ContractError)):
        return HTTPException(status_code=400, detail=str(exc))
    if isinstance(exc, NumericError):
        return HTTPException(status_code=500, detail=str(exc))
    return HTTPException(status_code=500, detail=f"internal error: {exc}")


def create_app(workdir="."):
    workdir = Path(workdir).resolve()
    workdir.mkdir(parents=True, exist_ok=True)
    app = FastAPI(
        title="xvapinn",
        description="XVA option pricing: trained-network serving plus closed-form "
        "and finite-difference oracles",
    )
    jobs = JobRegistry()
    app.state.workdir = workdir
    app.state.jobs = jobs

    def resolve(relpath):
        path = (workdir / relpath).resolve()
        if not str(path).startswith(str(workdir)):
            raise ContractError("paths must stay inside the service working directory")
        return path

    def load_case(model_section, lambda_b):
        return run.spec_from_section(model_section, lambda_b)

    @app.get("/health")
    def health():
        from .. import __version__

        return {"status": "ok", "version": __version__}

    @app.post("/price", response_model=schemas.PriceResponse)
    def price(req: schemas.PriceRequest):
        try:
            spec = load_case(req.model, None)
            out = run.price_table(spec, np.asarray(req.points), risky=req.risky,
                                  greeks=req.greeks)
        except XvaPinnError as exc:
            raise _http_error(exc) from exc
        resp = {"prices": out["prices"].tolist()}
        if req.greeks:
            resp["deltas"] = out["deltas"].tolist()
            resp["gammas"] = out["gammas"].tolist()
        return resp

    @app.post("/feller", response_model=schemas.FellerResponse)
    def feller(req: schemas.FellerRequest):
        try:
            spec = load_case(req.model, None)
            return {"feller_satisfied": models.feller_check(spec)}
        except XvaPinnError as exc:
            raise _http_error(exc) from exc

    @app.post("/fd", response_model=schemas.FdResponse)
    def fd(req: schemas.FdRequest):
        try:
            spec = load_case(req.model, req.lambda_b)
            fd_cfg = req.fd
            cells = fd_cfg.n_t * (fd_cfg.n_s or 1) * (fd_cfg.n_s1 or 1) * (
                fd_cfg.n_s2 or 1
            ) * (fd_cfg.n_v or 1)
            if cells > MAX_FD_CELLS:
                raise ContractError(
                    f"requested FD solve exceeds the synchronous budget ({cells} cells)"
                )
            surf = run.solve_fd(spec, fd_cfg, keep="final")
            csv_path = workdir / f"{req.tag}.csv"
            surf.save(csv_path)
        except XvaPinnError as exc:
            raise _http_error(exc) from exc
        return {
            "csv_path": str(csv_path.relative_to(workdir)),
            "meta_path": str(csv_path.relative_to(workdir)) + ".json",
            "fixed_point": surf.metadata["fixed_point"],
            "final_min": float(surf.final().min()),
            "final_max": float(surf.final().max()),
        }

    @app.post("/greeks", response_model=schemas.GreeksResponse)
    def greeks(req: schemas.GreeksRequest):
        try:
            spec = load_case(req.model, req.lambda_b)
            params = load_checkpoint(resolve(req.checkpoint))
            columns, rows = run.greeks_table(params, spec, np.asarray(req.points))
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except XvaPinnError as exc:
            raise _http_error(exc) from exc
        return {"columns": columns, "rows": [[float(v) for v in row] for row in rows]}

    @app.post("/compare", response_model=schemas.CompareResponse)
    def compare(req: schemas.CompareRequest):
        try:
            spec = load_case(req.model, req.lambda_b)
            params = load_checkpoint(resolve(req.checkpoint))
            if req.surface_csv is not None:
                surface = reference.SolutionSurface.load(resolve(req.surface_csv))
                report, (names, columns) = run.compare_with_surface(params, spec, surface)
            else:
                steps = {"t": 16}
                for ax in spec.domain.axes:
                    steps[ax.name] = 16
                report, (names, columns) = run.compare_with_closed_form(params, spec, steps)
            points_csv = workdir / "compare_points.csv"
            metrics.write_pointwise_csv(points_csv, columns, names)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except XvaPinnError as exc:
            raise _http_error(exc) from exc
        return {
            "report": report.to_dict(),
            "points_csv": str(points_csv.relative_to(workdir)),
        }

    @app.post("/train/jobs", response_model=schemas.TrainJobStatus)
    def submit_training(req: schemas.TrainJobRequest):
        out_dir = workdir / req.tag
        job_id = jobs.create(out_dir)

        def work():
            jobs.update(job_id, state="running")
            try:
                summary = run.run_experiment(req.config, out_dir)
                jobs.update(job_id, state="done", summary=summary)
            except Exception as exc:  # job errors surface through status polling
                jobs.update(
                    job_id, state="failed",
                    detail=f"{exc}\n{traceback.format_exc(limit=3)}",
                )

        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id, "state": "queued", "output_dir": str(out_dir)}

    @app.get("/train/jobs/{job_id}", response_model=schemas.TrainJobStatus)
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return {"job_id": job_id, **job}

    return app
