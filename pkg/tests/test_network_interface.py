import random
from collections import deque

import pytest

from core_model import MeshCoordinate, MessageKind, SimulationFault, SlotId, encode_packet
from network_interface import (
    ACK_NACK,
    ACK_OK,
    DataReceive,
    NetworkInterface,
    SendQueueFull,
    ni_receive_flit,
)
from router import ControlCommand, PortId, Router


@pytest.fixture()
def node():
    coord = MeshCoordinate(2, 1)
    return NetworkInterface(coord), Router(coord, 3, 3)


def _feed(ni: NetworkInterface, slot: SlotId, msg) -> None:
    for flit in encode_packet(msg):
        ni.ni_receive_flit(slot, flit, 0)


class _Sink:
    def __init__(self, accept: bool = True) -> None:
        self.accept = accept
        self.got = []

    def __call__(self, slot, msg, now) -> bool:
        if self.accept:
            self.got.append((slot, msg, now))
        return self.accept


def test_data_receive_assembles_example_packet(make_message):
    msg = make_message()
    dr = DataReceive(SlotId.SLOT_0)
    for flit in encode_packet(msg)[:-1]:
        ni_receive_flit(dr, flit)
        assert dr.ready
    ni_receive_flit(dr, encode_packet(msg)[-1])
    assert dr.av_receive and not dr.ready
    assert dr.assembled == msg
    with pytest.raises(SimulationFault):
        dr.receive(encode_packet(msg)[0])
    assert dr.take() == msg
    assert dr.idle


def test_handoff_moves_both_slots_in_the_same_cycle(node, make_message):
    ni, router = node
    router.apply_control(ControlCommand.enable_local1())
    first = make_message(dst=(2, 1, 0), msg_id=1)
    second = make_message(dst=(2, 1, 1), msg_id=2)
    _feed(ni, SlotId.SLOT_0, first)
    _feed(ni, SlotId.SLOT_1, second)

    sink = _Sink()
    ni.buffer_deliver(10, sink, router)
    assert ni.data_in == [first, second]
    assert sink.got == []

    ni.buffer_deliver(11, sink, router)
    assert sink.got == [(SlotId.SLOT_0, first, 11), (SlotId.SLOT_1, second, 11)]
    assert ni.idle


def test_full_attachment_stalls_data_in_and_dr(node, make_message):
    ni, router = node
    held = make_message(msg_id=1)
    waiting = make_message(msg_id=2)
    _feed(ni, SlotId.SLOT_0, held)
    blocked = _Sink(accept=False)
    ni.buffer_deliver(1, blocked, router)
    _feed(ni, SlotId.SLOT_0, waiting)

    ni.buffer_deliver(2, blocked, router)
    assert ni.data_in[0] == held
    assert ni.dr[0].av_receive
    assert not ni.local_ready(SlotId.SLOT_0)

    sink = _Sink()
    ni.buffer_deliver(3, sink, router)
    assert [m for _, m, _ in sink.got] == [held]
    assert ni.data_in[0] == waiting


def test_compute_request_is_not_intercepted(node, make_message):
    ni, router = node
    _feed(ni, SlotId.SLOT_0, make_message())
    ni.buffer_deliver(0, _Sink(), router)
    assert ni.data_in[0].kind == MessageKind.COMPUTE_REQ
    assert not ni.send_queue


def test_enable_port_is_acknowledged(node, make_message):
    ni, router = node
    request = make_message(kind=MessageKind.ENABLE_PORT, src=(0, 0, 0), payload=())
    _feed(ni, SlotId.SLOT_0, request)
    ni.buffer_deliver(5, _Sink(), router)

    assert router.vctrl.local1_enabled
    (ack,) = ni.send_queue
    assert ack.kind == MessageKind.ENABLE_ACK
    assert ack.payload == (ACK_OK,)
    assert ack.dst == request.src
    assert ni.data_in == [None, None]


def test_disable_port_while_slot_one_draining_is_nacked(node, make_message):
    ni, router = node
    router.apply_control(ControlCommand.enable_local1())
    partial = encode_packet(make_message(dst=(2, 1, 1)))[:3]
    for flit in partial:
        ni.ni_receive_flit(SlotId.SLOT_1, flit, 0)

    _feed(ni, SlotId.SLOT_0, make_message(kind=MessageKind.DISABLE_PORT, src=(0, 0, 0), payload=()))
    ni.buffer_deliver(1, _Sink(), router)

    (ack,) = ni.send_queue
    assert ack.kind == MessageKind.DISABLE_ACK
    assert ack.payload == (ACK_NACK,)
    assert router.vctrl.local1_enabled


def test_send_queue_full(make_message):
    ni = NetworkInterface(MeshCoordinate(0, 1), send_capacity=1)
    ni.ni_send(make_message())
    assert not ni.can_send
    with pytest.raises(SendQueueFull):
        ni.ni_send(make_message())


def test_message_ids_wrap_at_sixteen_bits():
    ni = NetworkInterface(MeshCoordinate(0, 0))
    assert [ni.next_message_id() for _ in range(3)] == [0, 1, 2]
    ni._next_id = 0xFFFF
    assert ni.next_message_id() == 0xFFFF
    assert ni.next_message_id() == 0


def test_slot_one_traffic_uses_local1_only_when_enabled(node, make_message):
    ni, router = node
    reply = make_message(kind=MessageKind.COMPUTE_REP, src=(2, 1, 1), dst=(0, 1, 0), payload=(6,))

    ni.ni_send(reply)
    ni.inject(router, 0)
    assert len(router.in_buf[PortId.LOCAL0]) == 1
    assert ni.current.port == PortId.LOCAL0

    ni2 = NetworkInterface(MeshCoordinate(2, 1))
    router2 = Router(MeshCoordinate(2, 1), 3, 3)
    router2.apply_control(ControlCommand.enable_local1())
    ni2.ni_send(reply)
    ni2.inject(router2, 0)
    assert len(router2.in_buf[PortId.LOCAL1]) == 1
    assert list(ni2.injected_keys[PortId.LOCAL1]) == [reply.key]


def test_injection_stops_when_local_buffer_is_full(node, make_message):
    ni, router = node
    ni.ni_send(make_message(src=(2, 1, 0), dst=(0, 1, 0)))
    written = [ni.inject(router, t) for t in range(6)]
    assert sum(f is not None for f in written) == router.buffer_depth
    assert ni.current is not None and ni.current.cursor == router.buffer_depth


def test_every_packet_reaches_the_attachment_exactly_once(node, make_message):
    ni, router = node
    router.apply_control(ControlCommand.enable_local1())
    rng = random.Random(5)
    sent = {SlotId.SLOT_0: [], SlotId.SLOT_1: []}
    wire = {}
    for slot in sent:
        for i in range(40):
            msg = make_message(
                dst=(2, 1, int(slot)),
                msg_id=100 * int(slot) + i,
                payload=[rng.randrange(1 << 32) for _ in range(rng.randint(0, 3))],
            )
            sent[slot].append(msg)
        wire[slot] = deque(f for m in sent[slot] for f in encode_packet(m))

    got = {SlotId.SLOT_0: [], SlotId.SLOT_1: []}

    def flaky_sink(slot, msg, now):
        if rng.random() < 0.4:
            return False
        got[slot].append(msg)
        return True

    for now in range(10_000):
        for slot, flits in wire.items():
            if flits and ni.local_ready(slot):
                ni.ni_receive_flit(slot, flits.popleft(), now)
        ni.buffer_deliver(now, flaky_sink, router)
        if not any(wire.values()) and ni.idle:
            break

    assert got == sent
    assert ni.idle
