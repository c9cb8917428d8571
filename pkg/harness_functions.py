# harness_functions.py

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

from mcp.server.fastmcp import FastMCP

from core_model import (
    MeshCoordinate,
    Message,
    MessageKind,
    Mode,
    SlotId,
    VNoCError,
    VirtualAddress,
    encode_packet,
)
from run_stats import RunStats, SpeedupPoint, SpeedupReport
from sim_config import SimConfig, parse_config
from sim_engine import Tracer, build

logger = logging.getLogger(__name__)

mcp = FastMCP("VNoC_simulator")


class ConfigMismatch(VNoCError):
    pass


# ---------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------


def _sweep_point(config: SimConfig, n: int) -> SpeedupPoint:
    """
    Internal helper:
        Run one sweep point (baseline then vnoc, same seed and workload).
        Top-level so worker processes can pickle it.
    """
    sized = config.with_overrides(n_tasks=n)
    baseline = run_once(sized.with_overrides(mode=Mode.BASELINE), trace_path=None, tracing=False)
    vnoc = run_once(sized.with_overrides(mode=Mode.VNOC), trace_path=None, tracing=False)
    point = SpeedupPoint.from_makespans(n, baseline.makespan_cycles, vnoc.makespan_cycles)
    logger.info(
        f"sweep n={n}: baseline {point.baseline_makespan}, vnoc {point.vnoc_makespan}, "
        f"speedup {point.speedup:.4f}"
    )
    return point


# ---------------------------------------------------------
# Harness operations
# ---------------------------------------------------------


def run_once(
    config: SimConfig,
    trace_path: Optional[str] = None,
    tracing: bool = True,
) -> RunStats:
    """
    Purpose:
        Build and run one simulation.

    Args:
        config (SimConfig):
            Validated configuration.
        trace_path (Optional[str]):
            Trace CSV destination; falls back to `config.trace`.
        tracing (bool):
            False ignores both trace destinations.

    Returns:
        RunStats:
            The run's statistics.

    Raises:
        WatchdogTimeout, SimulationFault: propagated from the engine.
    """
    path = (trace_path or config.trace) if tracing else None
    tracer = Tracer(path) if path else None
    try:
        sim = build(config, tracer)
        return sim.run()
    finally:
        if tracer is not None:
            tracer.close()


def run_sweep(
    config: SimConfig,
    task_counts: Sequence[int],
    workers: int = 1,
) -> SpeedupReport:
    """
    Purpose:
        For each task count run baseline and vnoc on the identical workload
        and tabulate speedup = baseline / vnoc makespan.

    Args:
        config (SimConfig):
            Base configuration; its mode is ignored.
        task_counts (Sequence[int]):
            Values of n, e.g. [2, 4, 6, 8].
        workers (int):
            Worker processes; 1 runs the points in this process.

    Returns:
        SpeedupReport:
            Points sorted by n.

    Example usage:
        >>> run_sweep(parse_config("{}"), [1]).points[0].speedup
        1.0
    """
    counts = list(task_counts)
    if not counts:
        raise ValueError("task_counts must not be empty")
    if any(n < 1 for n in counts):
        raise ValueError(f"task counts must be >= 1, got {counts}")

    logger.info(f"sweeping n={counts} with {workers} worker(s)")
    if workers > 1 and len(counts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_sweep_point, [config] * len(counts), counts))
    else:
        points = [_sweep_point(config, n) for n in counts]
    return SpeedupReport(points=sorted(points, key=lambda p: p.n))


def compare(a: RunStats, b: RunStats) -> SpeedupPoint:
    """
    Speedup of run b over run a (a.makespan / b.makespan). Both runs must
    share a workload digest, i.e. differ at most in mode.
    """
    if a.workload_digest != b.workload_digest:
        raise ConfigMismatch(
            f"runs come from different workloads ({a.workload_digest} vs {b.workload_digest})"
        )
    return SpeedupPoint.from_makespans(len(a.tasks), a.makespan_cycles, b.makespan_cycles)


# ---------------------------------------------------------
# MCP tools
# ---------------------------------------------------------


@mcp.tool()
def run_simulation(
    config_json: str = "{}",
    mode: Optional[str] = None,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    """
    Run one simulation and return its RunStats document.

    Args:
        config_json (str):
            JSON config; "{}" selects every default (3x3 mesh, four mixed
            tasks).
        mode (Optional[str]):
            "baseline" or "vnoc" to override the config.
        seed (Optional[int]):
            Seed override.

    Returns:
        Dict[str, Any]:
            RunStats as a JSON-compatible dict.
    """
    config = parse_config(config_json).with_overrides(mode=mode, seed=seed)
    return run_once(config, tracing=False).model_dump(mode="json")


@mcp.tool()
def run_speedup_sweep(config_json: str, task_counts: List[int]) -> Dict[str, Any]:
    """
    Sweep the number of tasks and report baseline/vnoc speedups.

    Returns:
        Dict[str, Any]:
            {"points": [...], "csv": "n,baseline_makespan,vnoc_makespan,speedup\\n..."}
    """
    report = run_sweep(parse_config(config_json), task_counts)
    data = report.model_dump(mode="json")
    data["csv"] = report.to_csv()
    return data


@mcp.tool()
def compare_runs(baseline: Dict[str, Any], vnoc: Dict[str, Any]) -> Dict[str, Any]:
    """Speedup between two RunStats documents produced by run_simulation."""
    point = compare(RunStats.model_validate(baseline), RunStats.model_validate(vnoc))
    return point.model_dump(mode="json")


@mcp.tool()
def encode_message(
    kind: str,
    src: List[int],
    dst: List[int],
    payload: List[int],
    message_id: int = 0,
    src_slot: int = 0,
    dst_slot: int = 0,
) -> List[int]:
    """
    Wire flits of one message, e.g. kind="COMPUTE_REQ", src=[0, 1],
    dst=[2, 1], payload=[48, 18] -> [33, 6, 1, 0, 0, 48, 0, 18].
    """
    msg = Message(
        message_id,
        MessageKind[kind.upper()],
        VirtualAddress(MeshCoordinate(*src), SlotId(src_slot)),
        VirtualAddress(MeshCoordinate(*dst), SlotId(dst_slot)),
        tuple(payload),
    )
    return [f.value for f in encode_packet(msg)]


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    mcp.run(transport="stdio")
