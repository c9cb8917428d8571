# workload.py

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from core_model import (
    MeshCoordinate,
    Message,
    MessageKind,
    SimulationFault,
    SlotId,
    UnexpectedMessage,
    VirtualAddress,
    WORD_MASK,
)
from processing_element import service_model

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
DEFAULT_RSA_EXPONENT = 65537
DEFAULT_RSA_MODULUS = 3233  # 61 * 53


class ResultMismatch(SimulationFault):
    pass


class Mix(str, Enum):
    GCD_ONLY = "gcd_only"
    RSA_ONLY = "rsa_only"
    MIXED = "mixed"


# ---------------------------------------------------------
# splitmix64
# ---------------------------------------------------------


class SplitMix64:
    """The splitmix64 generator, bit-exact."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def split_seed(seed: int, index: int) -> int:
    """
    Per-task seed: the (index + 1)-th output of a splitmix64 stream seeded
    with `seed`.
    """
    return SplitMix64((seed + index * GOLDEN_GAMMA) & MASK64).next()


# ---------------------------------------------------------
# Task specs
# ---------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    pe_type: str
    num_requests: int
    think_cycles: int
    arrival_cycle: int = 0
    operand_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_requests < 1:
            raise ValueError(f"task {self.task_id}: num_requests must be >= 1")
        if self.think_cycles < 0:
            raise ValueError(f"task {self.task_id}: think_cycles must be >= 0")


@dataclass(frozen=True)
class OperandPolicy:
    rsa_exponent: int = DEFAULT_RSA_EXPONENT
    rsa_modulus: int = DEFAULT_RSA_MODULUS
    fixed_operands: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)


def generate_workload(
    n_tasks: int,
    mix: Mix,
    base: TaskSpec,
    seed: int,
    arrival_interval: int = 0,
    arrival_cycles: Optional[Sequence[int]] = None,
) -> List[TaskSpec]:
    """
    Purpose:
        Build the task list of one experiment point.

    Args:
        n_tasks: number of tasks (>= 1).
        mix: gcd_only, rsa_only, or mixed (GCD, RSA, GCD, ...).
        base: template for num_requests / think_cycles / arrival_cycle.
        seed: experiment seed; task i gets split_seed(seed, i).
        arrival_interval: task i arrives at base.arrival_cycle + i * interval.
        arrival_cycles: explicit arrival per task, overriding the interval.

    Returns:
        List[TaskSpec] with task ids 0..n-1.

    Example usage:
        >>> [t.pe_type for t in generate_workload(4, Mix.MIXED, base, 1)]
        ['GCD', 'RSA', 'GCD', 'RSA']
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if arrival_cycles is not None and len(arrival_cycles) < n_tasks:
        raise ValueError(f"arrival_cycles lists {len(arrival_cycles)} entries for {n_tasks} tasks")

    specs: List[TaskSpec] = []
    for i in range(n_tasks):
        if mix == Mix.GCD_ONLY:
            pe_type = "GCD"
        elif mix == Mix.RSA_ONLY:
            pe_type = "RSA"
        else:
            pe_type = "GCD" if i % 2 == 0 else "RSA"
        if arrival_cycles is not None:
            arrival = arrival_cycles[i]
        else:
            arrival = base.arrival_cycle + i * arrival_interval
        specs.append(
            replace(
                base,
                task_id=i,
                pe_type=pe_type,
                arrival_cycle=arrival,
                operand_seed=split_seed(seed, i),
            )
        )
    return specs


def next_operands(gen: SplitMix64, pe_type: str, policy: OperandPolicy) -> Tuple[int, ...]:
    """
    Next request payload for a task. GCD: two nonzero 32-bit words. RSA:
    [m, e, n] with m < n. Fixed operands, when configured for the type, are
    returned as-is and do not advance the generator.
    """
    fixed = policy.fixed_operands.get(pe_type)
    if fixed is not None:
        return tuple(fixed)
    if pe_type == "GCD":
        a = (gen.next() & WORD_MASK) | 1
        b = (gen.next() & WORD_MASK) | 1
        return (a, b)
    if pe_type == "RSA":
        m = (gen.next() & WORD_MASK) % policy.rsa_modulus
        return (m, policy.rsa_exponent, policy.rsa_modulus)
    raise ValueError(f"no operand generator for PE type {pe_type!r}")


def expected_result(pe_type: str, payload: Sequence[int]) -> int:
    """Host-side recomputation, independent of the PE's service model."""
    if pe_type == "GCD":
        return math.gcd(payload[0], payload[1])
    if pe_type == "RSA":
        return pow(payload[0], payload[1], payload[2])
    raise ValueError(f"cannot verify results of PE type {pe_type!r}")


# ---------------------------------------------------------
# Host-side task state machine
# ---------------------------------------------------------


class HostPhase(str, Enum):
    DORMANT = "dormant"
    AWAITING_GRANT = "awaiting_grant"
    THINKING = "thinking"
    AWAITING_REPLY = "awaiting_reply"
    RELEASING = "releasing"
    DONE = "done"


class TaskHost:
    """One software task running on a host node."""

    def __init__(
        self,
        spec: TaskSpec,
        host_node: MeshCoordinate,
        manager: VirtualAddress,
        policy: OperandPolicy,
        next_id: Callable[[], int],
    ) -> None:
        self.spec = spec
        self.host_node = host_node
        self.address = VirtualAddress(host_node, SlotId.SLOT_0)
        self.manager = manager
        self.policy = policy
        self._next_id = next_id
        self.gen = SplitMix64(spec.operand_seed)
        self.phase = HostPhase.DORMANT
        self.think_until: Optional[int] = None
        self.awaiting_id: Optional[int] = None
        self.outstanding: Optional[Tuple[int, ...]] = None
        self.issued_at: Optional[int] = None
        self.assigned: Optional[VirtualAddress] = None
        self.issued = 0
        self.completed = 0
        self.start_cycle: Optional[int] = None
        self.finish_cycle: Optional[int] = None
        self.latencies: List[int] = []

    def _message(self, kind: MessageKind, dst: VirtualAddress, payload: Tuple[int, ...]) -> Message:
        return Message(self._next_id(), kind, self.address, dst, payload)

    def _begin_thinking(self, now: int) -> None:
        self.phase = HostPhase.THINKING
        self.think_until = now + self.spec.think_cycles

    def _handle(self, msg: Message, now: int, out: List[Message]) -> None:
        if msg.kind == MessageKind.MAP_GRANT and self.phase == HostPhase.AWAITING_GRANT:
            _, x, y, slot = msg.payload
            self.assigned = VirtualAddress(MeshCoordinate(x, y), SlotId(slot))
            if self.start_cycle is None:
                self.start_cycle = now
            self._begin_thinking(now)
        elif msg.kind == MessageKind.COMPUTE_REP and self.phase == HostPhase.AWAITING_REPLY:
            _, result = msg.payload
            expected = expected_result(self.spec.pe_type, self.outstanding)
            if result != expected:
                raise ResultMismatch(
                    f"task {self.spec.task_id}: {self.spec.pe_type}{self.outstanding} "
                    f"returned {result}, expected {expected}"
                )
            self.completed += 1
            self.latencies.append(now - self.issued_at)
            self.awaiting_id = None
            self.outstanding = None
            if self.completed == self.spec.num_requests:
                self.phase = HostPhase.RELEASING
                out.append(self._message(MessageKind.RELEASE, self.manager, (self.spec.task_id,)))
            else:
                self._begin_thinking(now)
        elif msg.kind == MessageKind.RELEASE_ACK and self.phase == HostPhase.RELEASING:
            self.phase = HostPhase.DONE
            self.finish_cycle = now
        else:
            raise UnexpectedMessage(
                f"task {self.spec.task_id} in {self.phase.value} got {msg.kind.name} from {msg.src}"
            )

    def host_step(self, inbox: Sequence[Message], now: int) -> List[Message]:
        """
        Advance the task one cycle: handle delivered messages, then fire the
        arrival / think-time timers.
        """
        out: List[Message] = []
        for msg in inbox:
            self._handle(msg, now, out)

        if self.phase == HostPhase.DORMANT and now >= self.spec.arrival_cycle:
            code = service_model(self.spec.pe_type).code
            out.append(self._message(MessageKind.MAP_REQ, self.manager, (self.spec.task_id, code)))
            self.phase = HostPhase.AWAITING_GRANT

        if self.phase == HostPhase.THINKING and now >= self.think_until:
            self.outstanding = next_operands(self.gen, self.spec.pe_type, self.policy)
            request = self._message(MessageKind.COMPUTE_REQ, self.assigned, self.outstanding)
            self.awaiting_id = request.id
            self.issued_at = now
            self.issued += 1
            self.phase = HostPhase.AWAITING_REPLY
            out.append(request)
        return out

    @property
    def done(self) -> bool:
        return self.phase == HostPhase.DONE

    @property
    def next_event(self) -> Optional[int]:
        if self.phase == HostPhase.DORMANT:
            return self.spec.arrival_cycle
        if self.phase == HostPhase.THINKING:
            return self.think_until
        return None


class HostNode:
    """
    A host mesh node running one or more tasks. Routes MapGrant/ReleaseAck
    by task id and ComputeRep by the request id it echoes.
    """

    def __init__(self, coord: MeshCoordinate) -> None:
        self.coord = coord
        self.tasks: List[TaskHost] = []
        self.inbox: List[Message] = []

    def add(self, task: TaskHost) -> None:
        self.tasks.append(task)

    def _owner(self, msg: Message) -> TaskHost:
        if msg.kind in (MessageKind.MAP_GRANT, MessageKind.RELEASE_ACK):
            for task in self.tasks:
                if task.spec.task_id == msg.payload[0]:
                    return task
        elif msg.kind == MessageKind.COMPUTE_REP:
            for task in self.tasks:
                if task.awaiting_id == msg.payload[0]:
                    return task
        raise UnexpectedMessage(f"host {self.coord} has no task for {msg.kind.name} {msg.payload}")

    def step(self, now: int) -> List[Message]:
        routed: Dict[int, List[Message]] = {}
        for msg in self.inbox:
            routed.setdefault(self._owner(msg).spec.task_id, []).append(msg)
        self.inbox = []
        out: List[Message] = []
        for task in self.tasks:
            out.extend(task.host_step(routed.get(task.spec.task_id, ()), now))
        return out

    @property
    def next_event(self) -> Optional[int]:
        times = [t.next_event for t in self.tasks if t.next_event is not None]
        return min(times) if times else None
