# router.py

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Mapping, Optional, Tuple

from core_model import (
    Flit,
    IllegalTransition,
    MeshCoordinate,
    SimulationFault,
    SlotId,
    VirtualAddress,
    header_destination,
)

if TYPE_CHECKING:
    from sim_engine import Tracer

logger = logging.getLogger(__name__)

DEFAULT_BUFFER_DEPTH = 4


class PortId(IntEnum):
    EAST = 0
    WEST = 1
    NORTH = 2
    SOUTH = 3
    LOCAL0 = 4
    LOCAL1 = 5

    @property
    def is_local(self) -> bool:
        return self >= PortId.LOCAL0

    @property
    def slot(self) -> SlotId:
        return SlotId(int(self) - int(PortId.LOCAL0))


# Fixed arbitration order; round-robin starts after the last grant.
ARBITRATION_ORDER: Tuple[PortId, ...] = tuple(PortId)
MESH_PORTS: Tuple[PortId, ...] = (PortId.EAST, PortId.WEST, PortId.NORTH, PortId.SOUTH)

OPPOSITE: Dict[PortId, PortId] = {
    PortId.EAST: PortId.WEST,
    PortId.WEST: PortId.EAST,
    PortId.NORTH: PortId.SOUTH,
    PortId.SOUTH: PortId.NORTH,
}

STEP: Dict[PortId, Tuple[int, int]] = {
    PortId.EAST: (1, 0),
    PortId.WEST: (-1, 0),
    PortId.NORTH: (0, 1),
    PortId.SOUTH: (0, -1),
}


def local_port(slot: SlotId) -> PortId:
    return PortId(int(PortId.LOCAL0) + int(slot))


def neighbor(coord: MeshCoordinate, port: PortId) -> Tuple[int, int]:
    dx, dy = STEP[port]
    return (coord.x + dx, coord.y + dy)


def route_xy(current: MeshCoordinate, dst: VirtualAddress) -> PortId:
    """
    Dimension-ordered routing: resolve x fully, then y, then pick the local
    port named by the destination slot.
    """
    if dst.node.x > current.x:
        return PortId.EAST
    if dst.node.x < current.x:
        return PortId.WEST
    if dst.node.y > current.y:
        return PortId.NORTH
    if dst.node.y < current.y:
        return PortId.SOUTH
    return local_port(dst.slot)


# ---------------------------------------------------------
# Router state
# ---------------------------------------------------------


class TaskStatus(str, Enum):
    INACTIVE = "inactive"
    ACTIVE = "active"


class ControlOp(str, Enum):
    ENABLE_LOCAL1 = "enable_local1"
    DISABLE_LOCAL1 = "disable_local1"
    SET_TASK_STATUS = "set_task_status"


@dataclass(frozen=True)
class ControlCommand:
    op: ControlOp
    slot: Optional[SlotId] = None
    status: Optional[TaskStatus] = None

    @classmethod
    def enable_local1(cls) -> ControlCommand:
        return cls(ControlOp.ENABLE_LOCAL1)

    @classmethod
    def disable_local1(cls) -> ControlCommand:
        return cls(ControlOp.DISABLE_LOCAL1)

    @classmethod
    def set_task_status(cls, slot: SlotId, status: TaskStatus) -> ControlCommand:
        return cls(ControlOp.SET_TASK_STATUS, slot, status)


@dataclass
class VirtualizationController:
    virtualizable: bool
    task_0_status: TaskStatus = TaskStatus.INACTIVE
    task_1_status: TaskStatus = TaskStatus.INACTIVE
    local1_enabled: bool = False

    def status(self, slot: SlotId) -> TaskStatus:
        return self.task_0_status if slot == SlotId.SLOT_0 else self.task_1_status

    @property
    def both_active(self) -> bool:
        return (
            self.task_0_status == TaskStatus.ACTIVE
            and self.task_1_status == TaskStatus.ACTIVE
        )


class InputBuffer:
    """Bounded flit FIFO; each entry remembers the cycle it was written."""

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.fifo: Deque[Tuple[Flit, int]] = deque()
        self.drained = 0

    def __len__(self) -> int:
        return len(self.fifo)

    @property
    def has_space(self) -> bool:
        return len(self.fifo) < self.capacity

    def push(self, flit: Flit, now: int) -> None:
        if len(self.fifo) >= self.capacity:
            raise SimulationFault(f"input buffer overflow (capacity {self.capacity})")
        self.fifo.append((flit, now))

    def head(self, now: int) -> Optional[Flit]:
        """Head flit if it was written before `now` (one cycle of buffering)."""
        if self.fifo and self.fifo[0][1] < now:
            return self.fifo[0][0]
        return None

    def pop(self) -> Flit:
        self.drained += 1
        return self.fifo.popleft()[0]


@dataclass
class Ownership:
    input_port: PortId
    forwarded: int = 0
    remaining: Optional[int] = None


@dataclass
class CycleOutput:
    outgoing: Dict[PortId, Flit] = field(default_factory=dict)
    credits: List[PortId] = field(default_factory=list)
    grants: List[Tuple[PortId, PortId]] = field(default_factory=list)
    injected: List[PortId] = field(default_factory=list)


class Router:
    """
    Wormhole mesh router with credit flow control and a virtualization
    controller. Baseline routers have five ports; vnoc routers add Local1,
    which starts disabled.
    """

    def __init__(
        self,
        coord: MeshCoordinate,
        width: int,
        height: int,
        buffer_depth: int = DEFAULT_BUFFER_DEPTH,
        virtualizable: bool = True,
        tracer: Optional[Tracer] = None,
    ) -> None:
        self.coord = coord
        self.buffer_depth = buffer_depth
        self.tracer = tracer
        self.ports: Tuple[PortId, ...] = (
            ARBITRATION_ORDER if virtualizable else ARBITRATION_ORDER[:-1]
        )
        self.in_buf: Dict[PortId, InputBuffer] = {
            p: InputBuffer(buffer_depth) for p in self.ports
        }
        self.out_owner: Dict[PortId, Optional[Ownership]] = {p: None for p in self.ports}
        self.last_grant: Dict[PortId, PortId] = {p: self.ports[-1] for p in self.ports}
        self.in_route: Dict[PortId, Optional[PortId]] = {p: None for p in self.ports}
        # credits toward neighbors that exist; edge ports never get traffic under XY
        self.credits: Dict[PortId, int] = {}
        for p in MESH_PORTS:
            nx, ny = neighbor(coord, p)
            if 0 <= nx < width and 0 <= ny < height:
                self.credits[p] = buffer_depth
        self.vctrl = VirtualizationController(virtualizable=virtualizable)

    # -- helpers ---------------------------------------------------------

    def has_port(self, port: PortId) -> bool:
        return port in self.in_buf

    @property
    def is_empty(self) -> bool:
        return all(not buf.fifo for buf in self.in_buf.values())

    def accept(self, port: PortId, flit: Flit, now: int) -> None:
        if port not in self.in_buf:
            raise SimulationFault(f"router {self.coord} has no {port.name} input")
        self.in_buf[port].push(flit, now)

    def credit_return(self, port: PortId) -> None:
        self.credits[port] += 1
        if self.credits[port] > self.buffer_depth:
            raise SimulationFault(
                f"router {self.coord} {port.name} credits exceed buffer depth"
            )

    def _emit(self, now: int, event: str, port: PortId, flit: Optional[Flit], detail: str) -> None:
        if self.tracer is None:
            return
        tag = flit.trace_tag if flit is not None else None
        self.tracer.emit(
            now,
            event,
            self.coord,
            port.name,
            tag[0] if tag else None,
            tag[1] if tag else None,
            detail,
        )

    # -- arbitration -----------------------------------------------------

    def _requested_output(self, port: PortId, head: Flit) -> PortId:
        out = route_xy(self.coord, header_destination(head))
        if out == PortId.LOCAL1 and not self.vctrl.local1_enabled:
            raise SimulationFault(
                f"router {self.coord}: packet for slot 1 arrived on {port.name} "
                f"while Local1 is disabled"
            )
        if out not in self.out_owner:
            raise SimulationFault(f"router {self.coord} has no {out.name} output")
        if not out.is_local and out not in self.credits:
            raise SimulationFault(
                f"router {self.coord}: destination {header_destination(head)} is off-mesh"
            )
        return out

    def arbitrate(self, now: int) -> List[Tuple[PortId, PortId]]:
        """
        Grant free outputs to waiting header flits by round-robin over
        E, W, N, S, L0, L1, starting after each output's last grant.
        """
        requests: Dict[PortId, List[PortId]] = {}
        for port in self.ports:
            if self.in_route[port] is not None:
                continue
            head = self.in_buf[port].head(now)
            if head is None:
                continue
            out = self._requested_output(port, head)
            if self.out_owner[out] is None:
                requests.setdefault(out, []).append(port)

        grants: List[Tuple[PortId, PortId]] = []
        n = len(self.ports)
        for out in self.ports:
            waiting = requests.get(out)
            if not waiting:
                continue
            start = self.ports.index(self.last_grant[out]) + 1
            for i in range(n):
                cand = self.ports[(start + i) % n]
                if cand in waiting:
                    self.out_owner[out] = Ownership(cand)
                    self.in_route[cand] = out
                    self.last_grant[out] = cand
                    grants.append((cand, out))
                    self._emit(now, "GRANT", out, None, f"{cand.name}->{out.name}")
                    break
        return grants

    # -- per-cycle -------------------------------------------------------

    def router_cycle(
        self,
        now: int,
        local_ready: Callable[[SlotId], bool],
        incoming: Optional[Mapping[PortId, Flit]] = None,
    ) -> CycleOutput:
        """
        Purpose:
            Advance the router by one cycle: accept `incoming` (written this
            cycle, so not yet forwardable), arbitrate, then forward at most one
            flit per output where the downstream side has room.

        Args:
            now: current cycle.
            local_ready: whether the DataReceive unit behind a local output can
                take a flit this cycle.
            incoming: flits arriving this cycle, if the caller has not already
                pushed them with `accept`.

        Returns:
            CycleOutput with forwarded flits per output, input ports that
            drained a flit (one credit each), grants made, and local input
            ports that injected a header this cycle.
        """
        if incoming:
            for port, flit in incoming.items():
                self.accept(port, flit, now)

        out = CycleOutput()
        if self.is_empty:
            return out

        out.grants = self.arbitrate(now)

        for port in self.ports:
            owner = self.out_owner[port]
            if owner is None:
                continue
            buf = self.in_buf[owner.input_port]
            flit = buf.head(now)
            if flit is None:
                continue
            if port.is_local:
                if not local_ready(port.slot):
                    continue
            elif self.credits.get(port, 0) <= 0:
                continue

            buf.pop()
            if not port.is_local:
                self.credits[port] -= 1
            out.outgoing[port] = flit
            out.credits.append(owner.input_port)

            if owner.input_port.is_local:
                if owner.forwarded == 0:
                    out.injected.append(owner.input_port)
                self._emit(now, "INJ", owner.input_port, flit, f"->{port.name}")
            else:
                self._emit(now, "FWD", port, flit, f"{owner.input_port.name}->{port.name}")

            owner.forwarded += 1
            if owner.forwarded == 2:
                owner.remaining = flit.value
            elif owner.remaining is not None:
                owner.remaining -= 1
            if owner.remaining == 0:
                self.out_owner[port] = None
                self.in_route[owner.input_port] = None
        return out

    # -- virtualization controller --------------------------------------

    def local1_busy(self) -> bool:
        if not self.has_port(PortId.LOCAL1):
            return False
        return (
            len(self.in_buf[PortId.LOCAL1]) > 0
            or self.out_owner[PortId.LOCAL1] is not None
            or self.in_route[PortId.LOCAL1] is not None
        )

    def apply_control(self, cmd: ControlCommand, now: int = 0) -> None:
        v = self.vctrl
        if cmd.op == ControlOp.ENABLE_LOCAL1:
            if not v.virtualizable:
                raise IllegalTransition(f"router {self.coord} has no Local1 port")
            v.local1_enabled = True
        elif cmd.op == ControlOp.DISABLE_LOCAL1:
            if not v.virtualizable:
                raise IllegalTransition(f"router {self.coord} has no Local1 port")
            if v.task_1_status == TaskStatus.ACTIVE:
                raise IllegalTransition(f"router {self.coord}: task 1 still active")
            if self.local1_busy():
                raise IllegalTransition(f"router {self.coord}: Local1 still draining")
            v.local1_enabled = False
        elif cmd.op == ControlOp.SET_TASK_STATUS:
            if cmd.slot is None or cmd.status is None:
                raise IllegalTransition("SetTaskStatus needs a slot and a status")
            if cmd.slot == SlotId.SLOT_1:
                if cmd.status == TaskStatus.ACTIVE and not v.local1_enabled:
                    raise IllegalTransition(
                        f"router {self.coord}: task 1 activated with Local1 disabled"
                    )
                v.task_1_status = cmd.status
            else:
                v.task_0_status = cmd.status
        else:
            raise IllegalTransition(f"unknown control op {cmd.op}")

        if self.tracer is not None:
            detail = cmd.op.value
            if cmd.op == ControlOp.SET_TASK_STATUS:
                detail = f"{detail}:{int(cmd.slot)}={cmd.status.value}"
            self.tracer.emit(now, "CTRL", self.coord, "vctrl", None, None, detail)
        logger.debug(f"router {self.coord} control {cmd.op.value} at cycle {now}")
