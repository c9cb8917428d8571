# processing_element.py

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from core_model import (
    MeshCoordinate,
    Message,
    MessageKind,
    SimulationFault,
    SlotId,
    VNoCError,
    VirtualAddress,
    WORD_MASK,
)

if TYPE_CHECKING:
    from sim_engine import Tracer

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_CAPACITY = 4


class QueueFull(SimulationFault):
    pass


class RegionBusy(VNoCError):
    pass


class ArityMismatch(VNoCError, ValueError):
    pass


class UnknownPEType(VNoCError):
    pass


class ServiceModelParams(BaseModel):
    """Cycle costs of the PE service models and of partial reconfiguration."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    gcd_base: int = Field(default=4, ge=0)
    gcd_per_iter: int = Field(default=8, ge=0)
    rsa_base: int = Field(default=4, ge=0)
    rsa_mult_cost: int = Field(default=16, ge=0)
    t_recfg: int = Field(default=100_000, ge=1)


# ---------------------------------------------------------
# Service models
# ---------------------------------------------------------


def gcd_iterations(a: int, b: int) -> int:
    """Modulo steps of Euclid's algorithm until the remainder is zero."""
    steps = 0
    while b:
        a, b = b, a % b
        steps += 1
    return steps


def rsa_op_count(e: int) -> int:
    """
    Modular multiplications of left-to-right square-and-multiply:
    (bitlen(e) - 1) squarings plus (popcount(e) - 1) multiplies.
    """
    return e.bit_length() + bin(e).count("1") - 2


def _euclid(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def _square_and_multiply(m: int, e: int, n: int) -> int:
    result = m % n
    for bit in bin(e)[3:]:
        result = (result * result) % n
        if bit == "1":
            result = (result * m) % n
    return result


@dataclass(frozen=True)
class ServiceModel:
    name: str
    code: int
    arity: int
    compute: Callable[[Sequence[int]], int]
    cycles: Callable[[Sequence[int], ServiceModelParams], int]


_SERVICE_MODELS: Dict[str, ServiceModel] = {}


def register_service_model(
    name: str,
    arity: int,
    compute: Callable[[Sequence[int]], int],
    cycles: Callable[[Sequence[int], ServiceModelParams], int],
) -> ServiceModel:
    """Register a PE type; codes are assigned in registration order."""
    if name in _SERVICE_MODELS:
        return _SERVICE_MODELS[name]
    model = ServiceModel(name, len(_SERVICE_MODELS), arity, compute, cycles)
    _SERVICE_MODELS[name] = model
    return model


register_service_model(
    "GCD",
    2,
    lambda p: _euclid(p[0], p[1]),
    lambda p, s: s.gcd_base + s.gcd_per_iter * gcd_iterations(p[0], p[1]),
)
register_service_model(
    "RSA",
    3,
    lambda p: _square_and_multiply(p[0], p[1], p[2]),
    lambda p, s: s.rsa_base + s.rsa_mult_cost * rsa_op_count(p[1]),
)


def service_model(pe_type: str) -> ServiceModel:
    try:
        return _SERVICE_MODELS[pe_type]
    except KeyError:
        raise UnknownPEType(f"no service model registered for PE type {pe_type!r}") from None


def pe_type_from_code(code: int) -> str:
    for model in _SERVICE_MODELS.values():
        if model.code == code:
            return model.name
    raise UnknownPEType(f"no service model registered for PE type code {code}")


def known_pe_types() -> List[str]:
    return list(_SERVICE_MODELS)


def _check_arity(model: ServiceModel, payload: Sequence[int]) -> None:
    if len(payload) != model.arity:
        raise ArityMismatch(
            f"{model.name} takes {model.arity} operands, got {len(payload)}"
        )


def service_cycles(pe_type: str, payload: Sequence[int], params: ServiceModelParams) -> int:
    """
    Examples:
        >>> service_cycles("GCD", [48, 18], ServiceModelParams())
        28
        >>> service_cycles("RSA", [9, 5, 77], ServiceModelParams())
        52
    """
    model = service_model(pe_type)
    _check_arity(model, payload)
    return model.cycles(payload, params)


def compute_result(pe_type: str, payload: Sequence[int]) -> int:
    model = service_model(pe_type)
    _check_arity(model, payload)
    return model.compute(payload) & WORD_MASK


# ---------------------------------------------------------
# Processing element
# ---------------------------------------------------------


@dataclass
class _Job:
    request: Message
    slot: SlotId
    arrival: int
    start: int
    finish_at: int


class ProcessingElement:
    """
    One execution unit fed by two slot queues. Requests are served
    non-preemptively in global arrival order; ties go to slot 0.
    """

    def __init__(
        self,
        node: MeshCoordinate,
        pe_type: str,
        params: ServiceModelParams,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        next_id: Optional[Callable[[], int]] = None,
        tracer: Optional[Tracer] = None,
    ) -> None:
        service_model(pe_type)
        self.node = node
        self.pe_type = pe_type
        self.params = params
        self.capacity = queue_capacity
        self.q: Tuple[Deque[Tuple[Message, int]], Deque[Tuple[Message, int]]] = (
            deque(),
            deque(),
        )
        self.exec: Optional[_Job] = None
        self.busy_cycles = 0
        self.served = 0
        self.tracer = tracer
        self._next_id = next_id
        self._local_id = 0

    @property
    def is_idle(self) -> bool:
        return self.exec is None and not self.q[0] and not self.q[1]

    @property
    def has_queued(self) -> bool:
        return bool(self.q[0] or self.q[1])

    def has_space(self, slot: SlotId) -> bool:
        return len(self.q[int(slot)]) < self.capacity

    def pe_enqueue(self, slot: SlotId, msg: Message, now: int) -> None:
        queue = self.q[int(slot)]
        if len(queue) >= self.capacity:
            raise QueueFull(f"PE {self.node} slot {int(slot)} queue full")
        queue.append((msg, now))

    def _reply_id(self) -> int:
        if self._next_id is not None:
            return self._next_id()
        rid = self._local_id
        self._local_id = (self._local_id + 1) & 0xFFFF
        return rid

    def _emit(self, now: int, event: str, job: _Job, detail: str) -> None:
        if self.tracer is not None:
            self.tracer.emit(
                now, event, self.node, f"slot{int(job.slot)}", job.request.id, None, detail
            )

    def _pick(self, now: int) -> Optional[SlotId]:
        heads = [(self.q[i][0][1], i) for i in (0, 1) if self.q[i] and self.q[i][0][1] <= now]
        if not heads:
            return None
        return SlotId(min(heads)[1])

    def pe_step(self, now: int) -> Optional[Message]:
        """
        Purpose:
            One cycle of the execution unit. A request whose finish time is
            `now` completes and its ComputeRep is returned; then, if the unit
            is idle, the oldest queued request (slot 0 on ties) starts.

        Returns:
            The ComputeRep emitted this cycle, or None.
        """
        reply: Optional[Message] = None
        job = self.exec
        if job is not None and now >= job.finish_at:
            result = compute_result(self.pe_type, job.request.payload)
            reply = Message(
                self._reply_id(),
                MessageKind.COMPUTE_REP,
                VirtualAddress(self.node, job.slot),
                job.request.src,
                (job.request.id, result),
            )
            self.served += 1
            self.exec = None
            self._emit(now, "SVC_END", job, f"{self.pe_type}={result}")

        if self.exec is None:
            slot = self._pick(now)
            if slot is not None:
                msg, arrival = self.q[int(slot)].popleft()
                svc = max(1, service_cycles(self.pe_type, msg.payload, self.params))
                self.exec = _Job(msg, slot, arrival, now, now + svc)
                self.busy_cycles += svc
                self._emit(now, "SVC_START", self.exec, f"{self.pe_type} {svc}")
        return reply

    @property
    def next_event(self) -> Optional[int]:
        """Finish of the running job, else the earliest queued arrival."""
        if self.exec is not None:
            return self.exec.finish_at
        arrivals = [q[0][1] for q in self.q if q]
        return min(arrivals) if arrivals else None


# ---------------------------------------------------------
# Partial reconfigurable region
# ---------------------------------------------------------


class PRRStatus(str, Enum):
    EMPTY = "empty"
    RECONFIGURING = "reconfiguring"
    CONFIGURED = "configured"


class ReconfigurableRegion:
    """A PRR: empty, being reconfigured until ready_at, or hosting a PE."""

    def __init__(
        self,
        node: MeshCoordinate,
        params: ServiceModelParams,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        initial_type: Optional[str] = None,
        next_id: Optional[Callable[[], int]] = None,
        tracer: Optional[Tracer] = None,
    ) -> None:
        self.node = node
        self.params = params
        self.queue_capacity = queue_capacity
        self.tracer = tracer
        self._next_id = next_id
        self.status = PRRStatus.EMPTY
        self.pe: Optional[ProcessingElement] = None
        self.pending_type: Optional[str] = None
        self.ready_at: Optional[int] = None
        self.last_used = 0
        self.reconfig_count = 0
        self.busy_cycles = 0
        self.served = 0
        if initial_type is not None:
            self.pe = self._new_pe(initial_type)
            self.status = PRRStatus.CONFIGURED

    def _new_pe(self, pe_type: str) -> ProcessingElement:
        return ProcessingElement(
            self.node,
            pe_type,
            self.params,
            self.queue_capacity,
            next_id=self._next_id,
            tracer=self.tracer,
        )

    @property
    def pe_type(self) -> Optional[str]:
        if self.status == PRRStatus.RECONFIGURING:
            return self.pending_type
        return self.pe.pe_type if self.pe is not None else None

    def prr_reconfigure(self, new_type: str, now: int) -> None:
        service_model(new_type)
        if self.status == PRRStatus.RECONFIGURING:
            raise RegionBusy(f"PRR {self.node} is already reconfiguring")
        if self.status == PRRStatus.CONFIGURED and not self.pe.is_idle:
            raise RegionBusy(f"PRR {self.node} still has work queued or running")
        if self.pe is not None:
            self._retire_pe()
        self.status = PRRStatus.RECONFIGURING
        self.pending_type = new_type
        self.ready_at = now + self.params.t_recfg
        self.reconfig_count += 1
        if self.tracer is not None:
            self.tracer.emit(now, "RECFG_START", self.node, "", None, None, new_type)
        logger.debug(f"PRR {self.node} reconfiguring to {new_type}, ready at {self.ready_at}")

    def _retire_pe(self) -> None:
        self.busy_cycles += self.pe.busy_cycles
        self.served += self.pe.served
        self.pe = None

    def tick(self, now: int) -> bool:
        """Finish a pending reconfiguration at ready_at; True if it finished now."""
        if self.status != PRRStatus.RECONFIGURING or now < self.ready_at:
            return False
        self.pe = self._new_pe(self.pending_type)
        self.status = PRRStatus.CONFIGURED
        self.pending_type = None
        self.ready_at = None
        if self.tracer is not None:
            self.tracer.emit(now, "RECFG_END", self.node, "", None, None, self.pe.pe_type)
        return True

    @property
    def total_busy_cycles(self) -> int:
        return self.busy_cycles + (self.pe.busy_cycles if self.pe is not None else 0)

    @property
    def total_served(self) -> int:
        return self.served + (self.pe.served if self.pe is not None else 0)

    @property
    def next_event(self) -> Optional[int]:
        if self.status == PRRStatus.RECONFIGURING:
            return self.ready_at
        if self.pe is not None:
            return self.pe.next_event
        return None
