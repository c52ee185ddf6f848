"""FastAPI service exposing the analysis operations over HTTP.

Every endpoint is a pure request/response wrapper over the core package;
computations run synchronously in the worker thread pool.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..model import PriorityVector, ProductChain
from ..lyapunov import build_v1, build_v2, verify_drift
from ..simulator import estimate_stability, simulate, TRAJECTORY_COLUMNS
from ..stability import SweepGrid, classify, sweep
from .schemas import (
    ClassifyRequest,
    ClassifyResponse,
    DriftCheckRequest,
    DriftCheckResponse,
    EstimateRequest,
    EstimateResponse,
    HealthResponse,
    SimulateRequest,
    SimulateResponse,
    StateModel,
    StatsModel,
    SweepRequest,
    SweepResponse,
    TrajectoryModel,
)

app = FastAPI(title="fluidmerge", version=__version__)


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/v1/simulate", response_model=SimulateResponse)
def run_simulate(req: SimulateRequest) -> SimulateResponse:
    stats = simulate(req.to_config())
    trajectory = None
    if stats.path is not None:
        trajectory = TrajectoryModel(
            columns=TRAJECTORY_COLUMNS, rows=[list(row) for row in stats.path]
        )
    final = stats.final_state
    return SimulateResponse(
        stats=StatsModel(
            horizon=stats.horizon,
            time_avg_q1=stats.time_avg_q1,
            time_avg_q2=stats.time_avg_q2,
            time_avg_q3=stats.time_avg_q3,
            occupancy=stats.occupancy,
            mean_throughput=stats.mean_throughput,
            event_count=stats.event_count,
            final_state=StateModel(
                mode=final.mode, q_1=final.q_1, q_2=final.q_2,
                q3_1=final.q3_1, q3_2=final.q3_2,
            ),
            total_inflow_veh=stats.total_inflow_veh,
            total_outflow_veh=stats.total_outflow_veh,
            checkpoint_times=stats.checkpoint_times,
            checkpoint_avg_upstream=stats.checkpoint_avg_upstream,
        ),
        trajectory=trajectory,
    )


@app.post("/v1/classify", response_model=ClassifyResponse)
def run_classify(req: ClassifyRequest) -> ClassifyResponse:
    result = classify(
        PriorityVector.from_phi1(req.phi_1),
        req.a_bar_1,
        req.a_bar_2,
        req.F_1,
        req.F_2,
        R_3=req.R_3,
        F_3=req.F_3,
        R_4=req.R_4,
        R_5=req.R_5,
    )
    return ClassifyResponse(
        verdict=result.verdict,
        in_phi0=int(result.in_phi0),
        in_phi1=int(result.in_phi1),
        in_phi2=None if result.in_phi2 is None else int(result.in_phi2),
        existence=int(result.existence),
        uniform=int(result.uniform),
    )


@app.post("/v1/sweep", response_model=SweepResponse)
def run_sweep(req: SweepRequest) -> SweepResponse:
    grid = SweepGrid(
        f3_values=tuple(req.f3_axis()),
        phi1_values=tuple(req.phi1_axis()),
        a_bar_1=req.a_bar_1,
        a_bar_2=req.a_bar_2,
        F_1=req.F_1,
        F_2=req.F_2,
        R_4=req.R_4,
        R_5=req.R_5,
        R_3=req.R_3,
    )
    result = sweep(grid)
    return SweepResponse(rows=[list(row) for row in result.rows()])


@app.post("/v1/estimate", response_model=EstimateResponse)
def run_estimate(req: EstimateRequest) -> EstimateResponse:
    estimate = estimate_stability(
        req.to_config(),
        ensemble_size=req.ensemble,
        horizon=req.horizon,
        slope_threshold=req.slope_threshold,
        avg_tol=req.avg_tol,
    )
    return EstimateResponse(
        verdict=estimate.verdict,
        slope=estimate.slope,
        bound_estimate=estimate.bound_estimate,
        runs=estimate.runs,
        slope_threshold=estimate.slope_threshold,
        avg_tol=estimate.avg_tol,
        rel_change=estimate.rel_change,
        checkpoint_times=estimate.checkpoint_times,
        ensemble_avg=estimate.ensemble_avg,
    )


@app.post("/v1/drift-check", response_model=DriftCheckResponse)
def run_drift_check(req: DriftCheckRequest) -> DriftCheckResponse:
    chains = ProductChain(req.chain_1.to_chain(), req.chain_2.to_chain())
    a_bar_1, a_bar_2 = chains.mean_inflows()
    if req.certificate == "v1":
        merge = req.merge.to_params()
        cert = build_v1(a_bar_1, a_bar_2, merge.F_1, merge.F_2, chains, scale=req.quadratic_scale)
        report = verify_drift(
            cert, merge, chains,
            box=req.box, samples=req.samples, seed=req.seed, sample_scale=req.sample_scale,
        )
    else:
        diverge = req.diverge.to_params()
        merge = req.merge.to_params(default_r3=diverge.F_3)
        cert = build_v2(merge, diverge, chains, scale=req.quadratic_scale)
        report = verify_drift(
            cert, merge, chains, diverge,
            box=req.box, samples=req.samples, seed=req.seed,
        )
    payload = report.to_dict()
    payload["per_mode_remainder"] = {
        m: {"mean": s["mean"], "std": s["std"]} for m, s in payload["per_mode_remainder"].items()
    }
    return DriftCheckResponse.model_validate(payload)
