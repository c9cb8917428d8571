# run_stats.py

from __future__ import annotations

import csv
import io
from typing import List, Optional, Tuple

import orjson
from pydantic import BaseModel, Field

from core_model import Mode


class TaskStats(BaseModel):
    task_id: int
    pe_type: str
    host: Tuple[int, int]
    requests: int
    start: Optional[int] = None
    finish: Optional[int] = None
    mean_latency: float = 0.0
    max_latency: int = 0


class PEStats(BaseModel):
    node: Tuple[int, int]
    pe_type: Optional[str] = None
    busy_cycles: int = 0
    utilization: float = Field(default=0.0, ge=0.0, le=1.0)
    served: int = 0
    reconfig_count: int = 0
    virtualized_cycles: int = 0


class NetworkStats(BaseModel):
    packets: int = 0
    flits: int = 0
    mean_packet_latency: float = 0.0


class RunStats(BaseModel):
    """Everything one run reports; serialized as the run's JSON document."""

    mode: Mode
    seed: int
    config_digest: str
    workload_digest: str
    makespan_cycles: int
    cycles_simulated: int
    tasks: List[TaskStats] = Field(default_factory=list)
    pes: List[PEStats] = Field(default_factory=list)
    network: NetworkStats = Field(default_factory=NetworkStats)

    def to_json(self) -> bytes:
        return orjson.dumps(
            self.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2
        )


class SpeedupPoint(BaseModel):
    n: int
    baseline_makespan: int = Field(ge=1)
    vnoc_makespan: int = Field(ge=1)
    speedup: float = Field(gt=0.0)

    @classmethod
    def from_makespans(cls, n: int, baseline: int, vnoc: int) -> SpeedupPoint:
        return cls(n=n, baseline_makespan=baseline, vnoc_makespan=vnoc, speedup=baseline / vnoc)


class SpeedupReport(BaseModel):
    points: List[SpeedupPoint] = Field(default_factory=list)

    def to_csv(self) -> str:
        """
        Columns n,baseline_makespan,vnoc_makespan,speedup; speedup printed
        with four decimals; rows sorted by n.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "baseline_makespan", "vnoc_makespan", "speedup"])
        for p in sorted(self.points, key=lambda p: p.n):
            writer.writerow([p.n, p.baseline_makespan, p.vnoc_makespan, f"{p.speedup:.4f}"])
        return buf.getvalue()

    def to_json(self) -> bytes:
        return orjson.dumps(
            self.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2
        )
