# network_interface.py

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Optional, Tuple

from core_model import (
    CONTROL_KINDS,
    ID_MASK,
    Flit,
    IllegalTransition,
    MeshCoordinate,
    Message,
    MessageKind,
    SimulationFault,
    SlotId,
    VNoCError,
    VirtualAddress,
    decode_packet,
    encode_packet,
)
from router import ControlCommand, PortId, Router

if TYPE_CHECKING:
    from sim_engine import Tracer

logger = logging.getLogger(__name__)

SEND_QUEUE_CAPACITY = 8
ACK_OK = 0
ACK_NACK = 1

# sink(slot, message, now) -> accepted?
DeliverySink = Callable[[SlotId, Message, int], bool]


class SendQueueFull(VNoCError):
    pass


# ---------------------------------------------------------
# DataReceive (DR0 / DR1)
# ---------------------------------------------------------


class DataReceive:
    """
    Reassembles the flits of one packet. Raises AvReceive once the packet is
    complete and then refuses flits until the packet is handed off.
    """

    def __init__(self, slot: SlotId) -> None:
        self.slot = slot
        self.accum: List[Flit] = []
        self.expected_remaining: Optional[int] = None
        self.av_receive = False
        self.assembled: Optional[Message] = None

    @property
    def ready(self) -> bool:
        return not self.av_receive

    @property
    def idle(self) -> bool:
        return not self.av_receive and not self.accum

    def receive(self, flit: Flit) -> bool:
        """Append one flit; return True when it completed the packet."""
        if self.av_receive:
            raise SimulationFault(f"DR{int(self.slot)} offered a flit while AvReceive is high")
        self.accum.append(flit)
        n = len(self.accum)
        if n == 2:
            self.expected_remaining = flit.value
        elif n > 2 and self.expected_remaining is not None:
            self.expected_remaining -= 1
        if self.expected_remaining == 0:
            self.assembled = decode_packet(self.accum)
            self.accum = []
            self.expected_remaining = None
            self.av_receive = True
            return True
        return False

    def take(self) -> Message:
        if not self.av_receive or self.assembled is None:
            raise SimulationFault(f"DR{int(self.slot)} has no assembled packet")
        msg = self.assembled
        self.assembled = None
        self.av_receive = False
        return msg


def ni_receive_flit(dr: DataReceive, flit: Flit) -> DataReceive:
    """Functional wrapper over `DataReceive.receive`."""
    dr.receive(flit)
    return dr


@dataclass
class _Outbound:
    msg: Message
    flits: List[Flit]
    port: PortId
    cursor: int = 0


# ---------------------------------------------------------
# Network interface
# ---------------------------------------------------------


class NetworkInterface:
    """
    Per-node NI: two DataReceive units, the Data_in_0/Data_in_1 handoff
    registers of the buffer controller, a send unit, and interception of
    EnablePort/DisablePort packets addressed to the node.
    """

    def __init__(
        self,
        coord: MeshCoordinate,
        send_capacity: int = SEND_QUEUE_CAPACITY,
        tracer: Optional[Tracer] = None,
    ) -> None:
        self.coord = coord
        self.send_capacity = send_capacity
        self.tracer = tracer
        self.dr: Tuple[DataReceive, DataReceive] = (
            DataReceive(SlotId.SLOT_0),
            DataReceive(SlotId.SLOT_1),
        )
        self.data_in: List[Optional[Message]] = [None, None]
        self.send_queue: Deque[Message] = deque()
        self.current: Optional[_Outbound] = None
        # keys of packets written into each local input, oldest first
        self.injected_keys: Dict[PortId, Deque[tuple]] = {
            PortId.LOCAL0: deque(),
            PortId.LOCAL1: deque(),
        }
        self.completed: List[Tuple[Message, int]] = []
        self.flits_received = 0
        self._next_id = 0

    # -- bookkeeping -----------------------------------------------------

    def next_message_id(self) -> int:
        """One 16-bit id counter per node, shared by everything it sends."""
        mid = self._next_id
        self._next_id = (self._next_id + 1) & ID_MASK
        return mid

    @property
    def idle(self) -> bool:
        return (
            self.dr[0].idle
            and self.dr[1].idle
            and self.data_in[0] is None
            and self.data_in[1] is None
            and not self.send_queue
            and self.current is None
        )

    def local_ready(self, slot: SlotId) -> bool:
        return self.dr[int(slot)].ready

    def _emit(self, now: int, event: str, slot: int, msg: Optional[Message], detail: str) -> None:
        if self.tracer is not None:
            self.tracer.emit(
                now, event, self.coord, f"slot{slot}", msg.id if msg else None, None, detail
            )

    # -- receive path ----------------------------------------------------

    def ni_receive_flit(self, slot: SlotId, flit: Flit, now: int) -> Optional[Message]:
        dr = self.dr[int(slot)]
        self.flits_received += 1
        if dr.receive(flit):
            msg = dr.assembled
            self.completed.append((msg, now))
            self._emit(now, "AVRCV", int(slot), msg, msg.kind.name)
            return msg
        return None

    def buffer_deliver(self, now: int, sink: DeliverySink, router: Router) -> None:
        """
        Purpose:
            Move packets one stage along DR -> Data_in -> attachment. A full
            Data_in register, or an attachment that refuses, stalls the DR,
            which in turn withholds flits upstream.

        Args:
            now: current cycle.
            sink: attachment entry point; returns False when it has no room.
            router: the co-located router, for control interception.
        """
        for slot in (SlotId.SLOT_0, SlotId.SLOT_1):
            i = int(slot)
            held = self.data_in[i]
            if held is not None and sink(slot, held, now):
                self.data_in[i] = None

            dr = self.dr[i]
            if not dr.av_receive or self.data_in[i] is not None:
                continue
            if dr.assembled.kind in CONTROL_KINDS:
                if not self.can_send:
                    continue
                ack = self.intercept_control(dr.take(), router, now)
                self.ni_send(ack)
            else:
                msg = dr.take()
                self.data_in[i] = msg
                self._emit(now, "DATAIN", i, msg, msg.kind.name)

    def intercept_control(self, msg: Message, router: Router, now: int) -> Message:
        """
        Apply an EnablePort/DisablePort packet to the co-located router and
        build the Ack addressed back to the sender. A refused transition is
        reported as a Nack status word instead of raising.
        """
        if msg.kind == MessageKind.ENABLE_PORT:
            cmd, ack_kind = ControlCommand.enable_local1(), MessageKind.ENABLE_ACK
        elif msg.kind == MessageKind.DISABLE_PORT:
            cmd, ack_kind = ControlCommand.disable_local1(), MessageKind.DISABLE_ACK
        else:
            raise SimulationFault(f"{msg.kind.name} is not a control packet")

        status = ACK_OK
        try:
            if cmd == ControlCommand.disable_local1() and self._local1_in_use():
                raise IllegalTransition(f"NI {self.coord}: slot-1 traffic in progress")
            router.apply_control(cmd, now)
        except IllegalTransition as exc:
            logger.warning(f"{msg.kind.name} refused at {self.coord}: {exc}")
            status = ACK_NACK

        return Message(
            self.next_message_id(),
            ack_kind,
            VirtualAddress(self.coord, SlotId.SLOT_0),
            msg.src,
            (status,),
        )

    def _local1_in_use(self) -> bool:
        return (
            not self.dr[1].idle
            or self.data_in[1] is not None
            or (self.current is not None and self.current.port == PortId.LOCAL1)
        )

    # -- send path -------------------------------------------------------

    @property
    def can_send(self) -> bool:
        return len(self.send_queue) < self.send_capacity

    def ni_send(self, msg: Message) -> None:
        if not self.can_send:
            raise SendQueueFull(f"NI {self.coord} send queue full ({self.send_capacity})")
        self.send_queue.append(msg)

    def inject(self, router: Router, now: int) -> Optional[Flit]:
        """
        Write at most one outbound flit into the router's local input buffer.
        Slot-1 traffic uses Local1 only while it is enabled; everything else
        uses Local0.
        """
        if self.current is None:
            if not self.send_queue:
                return None
            msg = self.send_queue.popleft()
            port = PortId.LOCAL0
            if (
                msg.src.slot == SlotId.SLOT_1
                and router.has_port(PortId.LOCAL1)
                and router.vctrl.local1_enabled
            ):
                port = PortId.LOCAL1
            self.current = _Outbound(msg, encode_packet(msg), port)

        out = self.current
        buf = router.in_buf[out.port]
        if not buf.has_space:
            return None
        flit = out.flits[out.cursor]
        buf.push(flit, now)
        if out.cursor == 0:
            self.injected_keys[out.port].append(out.msg.key)
        out.cursor += 1
        if out.cursor == len(out.flits):
            self.current = None
        return flit
