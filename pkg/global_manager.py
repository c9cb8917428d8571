# global_manager.py

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Mapping, Optional, Tuple, Union

from core_model import (
    MeshCoordinate,
    Message,
    MessageKind,
    Mode,
    SimulationFault,
    SlotId,
    UnexpectedMessage,
    VNoCError,
    VirtualAddress,
)
from network_interface import ACK_NACK
from processing_element import PRRStatus, pe_type_from_code, service_model
from router import ControlCommand, TaskStatus

if TYPE_CHECKING:
    from sim_engine import Tracer

logger = logging.getLogger(__name__)


class UnknownTask(VNoCError):
    pass


class PortState(str, Enum):
    """Manager-side mirror of a PE router's Local1 port."""

    DISABLED = "disabled"
    ENABLING = "enabling"
    ENABLED = "enabled"
    DISABLING = "disabling"


class DecisionKind(str, Enum):
    ASSIGN = "assign"
    ENABLE_THEN_ASSIGN = "enable_then_assign"
    RECONFIG_THEN_ASSIGN = "reconfig_then_assign"
    QUEUED = "queued"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    task_id: int
    node: Optional[MeshCoordinate] = None
    slot: Optional[SlotId] = None
    pe_type: Optional[str] = None


@dataclass(frozen=True)
class MapRequest:
    task_id: int
    pe_type: str
    host: VirtualAddress


@dataclass(frozen=True)
class Reconfigure:
    """Sideband command: start partial reconfiguration of a PRR."""

    node: MeshCoordinate
    pe_type: str


@dataclass(frozen=True)
class StatusUpdate:
    """Sideband command: update a router's task_i_status."""

    node: MeshCoordinate
    command: ControlCommand


Sideband = Union[Reconfigure, StatusUpdate]


@dataclass
class ManagerOutput:
    messages: List[Message] = field(default_factory=list)
    commands: List[Sideband] = field(default_factory=list)
    decisions: List[Decision] = field(default_factory=list)

    def extend(self, other: ManagerOutput) -> None:
        self.messages.extend(other.messages)
        self.commands.extend(other.commands)
        self.decisions.extend(other.decisions)


@dataclass
class DirectoryEntry:
    node: MeshCoordinate
    status: PRRStatus
    pe_type: Optional[str] = None
    slots: List[Optional[int]] = field(default_factory=lambda: [None, None])
    last_used: int = 0
    port: PortState = PortState.DISABLED
    ready_at: Optional[int] = None

    @property
    def active(self) -> int:
        return sum(1 for s in self.slots if s is not None)


@dataclass
class _Assignment:
    node: MeshCoordinate
    slot: SlotId
    host: VirtualAddress


class GlobalManager:
    """
    The adaptation manager: a directory of PRRs/PEs and the task assignments
    on them, plus a FIFO of map requests that could not be placed yet.
    Talks to hosts and PE routers over the NoC; reconfiguration and task
    status updates go out as sideband commands.
    """

    def __init__(
        self,
        node: MeshCoordinate,
        mode: Mode,
        prrs: Mapping[MeshCoordinate, Optional[str]],
        t_recfg: int,
        prefer_virtualize_over_reconfig: bool = False,
        next_id: Optional[Callable[[], int]] = None,
        tracer: Optional[Tracer] = None,
    ) -> None:
        self.node = node
        self.address = VirtualAddress(node, SlotId.SLOT_0)
        self.mode = mode
        self.t_recfg = t_recfg
        self.prefer_virtualize_over_reconfig = prefer_virtualize_over_reconfig
        self.tracer = tracer
        self.directory: Dict[MeshCoordinate, DirectoryEntry] = {}
        for coord in sorted(prrs, key=MeshCoordinate.sort_key):
            pe_type = prrs[coord]
            status = PRRStatus.CONFIGURED if pe_type is not None else PRRStatus.EMPTY
            self.directory[coord] = DirectoryEntry(coord, status, pe_type)
        self.pending: Deque[MapRequest] = deque()
        self.parked_enable: Dict[MeshCoordinate, MapRequest] = {}
        self.parked_reconfig: Dict[MeshCoordinate, MapRequest] = {}
        self.tasks: Dict[int, _Assignment] = {}
        self.inbox: Deque[Message] = deque()
        self.decision_log: List[Decision] = []
        self.messages_handled = 0
        self._next_id = next_id
        self._local_id = 0

    # ---------------------------------------------------------
    # Internal helpers
    # ---------------------------------------------------------

    def _mid(self) -> int:
        if self._next_id is not None:
            return self._next_id()
        mid = self._local_id
        self._local_id = (self._local_id + 1) & 0xFFFF
        return mid

    def _send(self, out: ManagerOutput, kind: MessageKind, dst: VirtualAddress, payload: Tuple[int, ...] = ()) -> None:
        out.messages.append(Message(self._mid(), kind, self.address, dst, payload))

    def _entries(self) -> List[DirectoryEntry]:
        return list(self.directory.values())

    def _record(self, decision: Decision, now: int, out: ManagerOutput) -> None:
        out.decisions.append(decision)
        self.decision_log.append(decision)
        if self.tracer is not None:
            where = "" if decision.node is None else f"{decision.node}"
            slot = "" if decision.slot is None else f"slot{int(decision.slot)}"
            self.tracer.emit(
                now,
                "DECISION",
                self.node,
                slot,
                decision.task_id,
                None,
                f"{decision.kind.value} {where} pending={len(self.pending)}".strip(),
            )
        logger.debug(f"cycle {now}: task {decision.task_id} -> {decision.kind.value} {decision.node}")

    def _assign(self, entry: DirectoryEntry, slot: SlotId, req: MapRequest, now: int, out: ManagerOutput) -> None:
        entry.slots[int(slot)] = req.task_id
        entry.last_used = now
        self.tasks[req.task_id] = _Assignment(entry.node, slot, req.host)
        out.commands.append(
            StatusUpdate(entry.node, ControlCommand.set_task_status(slot, TaskStatus.ACTIVE))
        )
        self._send(
            out,
            MessageKind.MAP_GRANT,
            req.host,
            (req.task_id, entry.node.x, entry.node.y, int(slot)),
        )

    def _reconfigure(self, entry: DirectoryEntry, req: MapRequest, now: int, out: ManagerOutput) -> Decision:
        entry.status = PRRStatus.RECONFIGURING
        entry.pe_type = req.pe_type
        entry.slots = [req.task_id, None]
        entry.ready_at = now + self.t_recfg
        self.parked_reconfig[entry.node] = req
        out.commands.append(Reconfigure(entry.node, req.pe_type))
        return Decision(
            DecisionKind.RECONFIG_THEN_ASSIGN, req.task_id, entry.node, SlotId.SLOT_0, req.pe_type
        )

    # -- placement rules -------------------------------------------------

    def _rule_idle_same_type(self, req: MapRequest, now: int, out: ManagerOutput) -> Optional[Decision]:
        for entry in self._entries():
            if (
                entry.status == PRRStatus.CONFIGURED
                and entry.pe_type == req.pe_type
                and entry.active == 0
            ):
                self._assign(entry, SlotId.SLOT_0, req, now, out)
                return Decision(DecisionKind.ASSIGN, req.task_id, entry.node, SlotId.SLOT_0, req.pe_type)
        return None

    def _rule_empty_region(self, req: MapRequest, now: int, out: ManagerOutput) -> Optional[Decision]:
        for entry in self._entries():
            if entry.status == PRRStatus.EMPTY:
                return self._reconfigure(entry, req, now, out)
        return None

    def _rule_share(self, req: MapRequest, now: int, out: ManagerOutput) -> Optional[Decision]:
        if self.mode != Mode.VNOC:
            return None
        for entry in self._entries():
            if (
                entry.status != PRRStatus.CONFIGURED
                or entry.pe_type != req.pe_type
                or entry.active != 1
                or entry.port in (PortState.ENABLING, PortState.DISABLING)
            ):
                continue
            free = SlotId(entry.slots.index(None))
            if free == SlotId.SLOT_0 or entry.port == PortState.ENABLED:
                self._assign(entry, free, req, now, out)
                return Decision(DecisionKind.ASSIGN, req.task_id, entry.node, free, req.pe_type)
            entry.slots[1] = req.task_id
            entry.port = PortState.ENABLING
            self.parked_enable[entry.node] = req
            self._send(out, MessageKind.ENABLE_PORT, VirtualAddress(entry.node, SlotId.SLOT_0))
            return Decision(
                DecisionKind.ENABLE_THEN_ASSIGN, req.task_id, entry.node, SlotId.SLOT_1, req.pe_type
            )
        return None

    def _rule_evict(self, req: MapRequest, now: int, out: ManagerOutput) -> Optional[Decision]:
        victim = self.select_victim(req.pe_type)
        if victim is None:
            return None
        entry = self.directory[victim]
        logger.debug(f"evicting {entry.pe_type} at {victim} for {req.pe_type}")
        return self._reconfigure(entry, req, now, out)

    def _place(self, req: MapRequest, now: int, out: ManagerOutput) -> Optional[Decision]:
        if self.prefer_virtualize_over_reconfig:
            rules = (self._rule_idle_same_type, self._rule_share, self._rule_empty_region, self._rule_evict)
        else:
            rules = (self._rule_idle_same_type, self._rule_empty_region, self._rule_share, self._rule_evict)
        for rule in rules:
            decision = rule(req, now, out)
            if decision is not None:
                return decision
        return None

    def _dispatch_pending(self, now: int, out: ManagerOutput) -> None:
        still_waiting: Deque[MapRequest] = deque()
        while self.pending:
            req = self.pending.popleft()
            decision = self._place(req, now, out)
            if decision is None:
                still_waiting.append(req)
            else:
                self._record(decision, now, out)
        self.pending = still_waiting

    def _is_known(self, task_id: int) -> bool:
        return (
            task_id in self.tasks
            or any(r.task_id == task_id for r in self.pending)
            or any(r.task_id == task_id for r in self.parked_enable.values())
            or any(r.task_id == task_id for r in self.parked_reconfig.values())
        )

    # ---------------------------------------------------------
    # Public operations
    # ---------------------------------------------------------

    def select_victim(self, pe_type: str) -> Optional[MeshCoordinate]:
        """
        Least recently used configured PE with no active slot; ties go to the
        smaller (y, x) node. `pe_type` is the type being provisioned.
        """
        idle = [
            e for e in self._entries() if e.status == PRRStatus.CONFIGURED and e.active == 0
        ]
        if not idle:
            return None
        return min(idle, key=lambda e: (e.last_used, e.node.y, e.node.x)).node

    def handle_map_request(self, req: MapRequest, now: int) -> ManagerOutput:
        """
        Purpose:
            Place a task on a virtual PE. Rules, in order: an idle PE of the
            requested type; an empty PRR (reconfigure); in vnoc mode the free
            slot of a half-occupied PE of the type; the LRU idle PE of another
            type (evict and reconfigure); otherwise queue. The policy flag moves
            sharing ahead of the two reconfiguration rules.

        Returns:
            ManagerOutput holding the decision, grant/control messages and
            sideband commands.
        """
        service_model(req.pe_type)
        if self._is_known(req.task_id):
            raise SimulationFault(f"duplicate MapReq for task {req.task_id}")
        out = ManagerOutput()
        decision = self._place(req, now, out)
        if decision is None:
            self.pending.append(req)
            decision = Decision(DecisionKind.QUEUED, req.task_id, pe_type=req.pe_type)
        self._record(decision, now, out)
        return out

    def handle_release(self, task_id: int, now: int) -> ManagerOutput:
        assignment = self.tasks.pop(task_id, None)
        if assignment is None:
            raise UnknownTask(f"task {task_id} is not assigned")
        out = ManagerOutput()
        entry = self.directory[assignment.node]
        entry.slots[int(assignment.slot)] = None
        entry.last_used = now
        out.commands.append(
            StatusUpdate(
                entry.node, ControlCommand.set_task_status(assignment.slot, TaskStatus.INACTIVE)
            )
        )
        if entry.active == 0 and entry.port == PortState.ENABLED:
            entry.port = PortState.DISABLING
            self._send(out, MessageKind.DISABLE_PORT, VirtualAddress(entry.node, SlotId.SLOT_0))
        self._send(out, MessageKind.RELEASE_ACK, assignment.host, (task_id,))
        self._dispatch_pending(now, out)
        return out

    def _handle_enable_ack(self, msg: Message, now: int, out: ManagerOutput) -> None:
        node = msg.src.node
        req = self.parked_enable.get(node)
        if req is None:
            raise UnexpectedMessage(f"EnableAck from {node} with nothing parked")
        if msg.payload and msg.payload[0] == ACK_NACK:
            logger.warning(f"EnablePort refused at {node}; retrying")
            self._send(out, MessageKind.ENABLE_PORT, VirtualAddress(node, SlotId.SLOT_0))
            return
        del self.parked_enable[node]
        entry = self.directory[node]
        entry.port = PortState.ENABLED
        self._assign(entry, SlotId.SLOT_1, req, now, out)
        self._dispatch_pending(now, out)

    def _handle_disable_ack(self, msg: Message, now: int, out: ManagerOutput) -> None:
        node = msg.src.node
        entry = self.directory.get(node)
        if entry is None or entry.port != PortState.DISABLING:
            raise UnexpectedMessage(f"DisableAck from {node} without a pending DisablePort")
        if msg.payload and msg.payload[0] == ACK_NACK:
            logger.warning(f"DisablePort refused at {node}; retrying")
            self._send(out, MessageKind.DISABLE_PORT, VirtualAddress(node, SlotId.SLOT_0))
            return
        entry.port = PortState.DISABLED
        self._dispatch_pending(now, out)

    def _finish_reconfigurations(self, now: int, out: ManagerOutput) -> None:
        due = sorted(
            (n for n in self.parked_reconfig if self.directory[n].ready_at <= now),
            key=lambda n: (self.directory[n].ready_at, n.y, n.x),
        )
        for node in due:
            req = self.parked_reconfig.pop(node)
            entry = self.directory[node]
            entry.status = PRRStatus.CONFIGURED
            entry.ready_at = None
            self._assign(entry, SlotId.SLOT_0, req, now, out)

    def manager_step(self, now: int) -> ManagerOutput:
        """
        One management action per cycle: release grants whose reconfiguration
        finished, then handle at most one inbound message.
        """
        out = ManagerOutput()
        if self.parked_reconfig:
            self._finish_reconfigurations(now, out)
        if not self.inbox:
            return out

        msg = self.inbox.popleft()
        self.messages_handled += 1
        if msg.kind == MessageKind.MAP_REQ:
            if len(msg.payload) != 2:
                raise UnexpectedMessage(f"MapReq with payload {msg.payload}")
            task_id, code = msg.payload
            req = MapRequest(task_id, pe_type_from_code(code), msg.src)
            out.extend(self.handle_map_request(req, now))
        elif msg.kind == MessageKind.RELEASE:
            out.extend(self.handle_release(msg.payload[0], now))
        elif msg.kind == MessageKind.ENABLE_ACK:
            self._handle_enable_ack(msg, now, out)
        elif msg.kind == MessageKind.DISABLE_ACK:
            self._handle_disable_ack(msg, now, out)
        else:
            raise UnexpectedMessage(f"manager cannot handle {msg.kind.name} from {msg.src}")
        return out

    # -- introspection ---------------------------------------------------

    @property
    def next_event(self) -> Optional[int]:
        times = [self.directory[n].ready_at for n in self.parked_reconfig]
        return min(times) if times else None

    @property
    def settled(self) -> bool:
        return not self.inbox and not self.parked_enable and not self.parked_reconfig and all(
            e.port in (PortState.DISABLED, PortState.ENABLED) for e in self._entries()
        )

    def slot_activity(self) -> Dict[MeshCoordinate, Tuple[bool, bool]]:
        return {
            n: (e.slots[0] is not None, e.slots[1] is not None) for n, e in self.directory.items()
        }
