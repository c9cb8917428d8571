from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
from typing import List, Optional
import uvicorn
import logging

from core_model import Mode, VNoCError
from harness_functions import ConfigMismatch, compare, run_once, run_sweep
from run_stats import RunStats
from sim_config import ConfigError, SimConfig, get_settings, validate_config

# Setup logging
settings = get_settings()
logging.basicConfig(level=settings.log_level.upper())
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(
    title="VNoC Simulator API",
    description="Cycle-level simulation of a virtualized NoC with shared, partially reconfigurable PEs",
    version="1.0.0"
)

# CORS middleware for cross-origin requests
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

class RunRequest(BaseModel):
    config: SimConfig = Field(default_factory=SimConfig)
    mode: Optional[Mode] = None
    seed: Optional[int] = Field(default=None, ge=0)

class SweepRequest(BaseModel):
    config: SimConfig = Field(default_factory=SimConfig)
    task_counts: List[int] = Field(default_factory=lambda: [2, 4, 6, 8], min_length=1)

class CompareRequest(BaseModel):
    baseline: RunStats
    vnoc: RunStats


def _http_error(e: Exception) -> HTTPException:
    if isinstance(e, ConfigError):
        return HTTPException(status_code=422, detail=f"Invalid config: {str(e)}")
    if isinstance(e, ConfigMismatch):
        return HTTPException(status_code=409, detail=f"Runs are not comparable: {str(e)}")
    return HTTPException(status_code=500, detail=f"Simulation failed: {type(e).__name__}: {str(e)}")


@app.post("/api/v1/vnoc/run")
async def run_endpoint(request: RunRequest):
    """
    Run one simulation and return its RunStats

    Examples:
    - {} runs the default 3x3 mesh with four mixed GCD/RSA tasks
    - {"mode": "baseline"} runs the same workload on conventional routers
    - {"config": {"workload": {"n_tasks": 8, "think_cycles": 500}}}
    """
    try:
        config = validate_config(request.config).with_overrides(mode=request.mode, seed=request.seed)
        logger.info(f"Received run request: mode={config.mode.value} n_tasks={config.workload.n_tasks}")

        stats = await run_in_threadpool(run_once, config, None, False)

        logger.info(f"Run finished with makespan {stats.makespan_cycles}")
        return {
            "stats": stats.model_dump(mode="json"),
            "status": "success",
            "code": 200
        }
    except HTTPException as he:
        raise he
    except VNoCError as e:
        logger.error(f"Error running simulation: {str(e)}")
        raise _http_error(e)


@app.post("/api/v1/vnoc/sweep")
async def sweep_endpoint(request: SweepRequest):
    """
    Run baseline and vnoc for every task count and report the speedups
    """
    try:
        if any(n < 1 for n in request.task_counts):
            raise HTTPException(status_code=400, detail="Task counts must be positive")
        config = validate_config(request.config)
        logger.info(f"Received sweep request: n={request.task_counts}")

        report = await run_in_threadpool(run_sweep, config, request.task_counts, settings.sweep_workers)

        return {
            "report": report.model_dump(mode="json"),
            "csv": report.to_csv(),
            "status": "success",
            "code": 200
        }
    except HTTPException as he:
        raise he
    except VNoCError as e:
        logger.error(f"Error running sweep: {str(e)}")
        raise _http_error(e)


@app.post("/api/v1/vnoc/compare")
async def compare_endpoint(request: CompareRequest):
    """Speedup of the vnoc run over the baseline run"""
    try:
        point = compare(request.baseline, request.vnoc)
        return {
            "comparison": point.model_dump(mode="json"),
            "status": "success",
            "code": 200
        }
    except VNoCError as e:
        logger.error(f"Error comparing runs: {str(e)}")
        raise _http_error(e)


@app.get("/")
async def root():
    return {
        "message": "VNoC Simulator API",
        "version": "1.0.0",
        "description": "Cycle-level simulation of a virtualized NoC with shared, partially reconfigurable PEs",
        "endpoints": {
            "run": "POST /api/v1/vnoc/run with {config: {...}, mode: 'baseline'|'vnoc', seed: 1}",
            "sweep": "POST /api/v1/vnoc/sweep with {config: {...}, task_counts: [2, 4, 6, 8]}",
            "compare": "POST /api/v1/vnoc/compare with {baseline: RunStats, vnoc: RunStats}"
        },
        "modes": [m.value for m in Mode],
        "pe_types": ["GCD", "RSA"],
        "workload_mixes": ["gcd_only", "rsa_only", "mixed"]
    }

@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "service": "VNoC Simulator API",
        "version": "1.0.0"
    }

if __name__ == "__main__":
    uvicorn.run(
        "app:app",
        host=settings.api_host,
        port=settings.api_port,
        log_level=settings.log_level.lower()
    )
