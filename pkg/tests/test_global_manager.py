import pytest

from core_model import MeshCoordinate, Message, MessageKind, Mode, SlotId, UnexpectedMessage
from global_manager import (
    DecisionKind,
    GlobalManager,
    MapRequest,
    PortState,
    Reconfigure,
    StatusUpdate,
    UnknownTask,
)
from network_interface import ACK_NACK, ACK_OK
from processing_element import PRRStatus
from router import ControlCommand, PortId, TaskStatus
from sim_engine import Simulation, build
from tests.conftest import vaddr

GCD_NODE = MeshCoordinate(2, 1)
RSA_NODE = MeshCoordinate(1, 2)
EMPTY_NODE = MeshCoordinate(1, 1)
HOST_A = vaddr(0, 1)
HOST_B = vaddr(1, 0)


def _manager(prrs, mode=Mode.VNOC, prefer=False):
    return GlobalManager(
        MeshCoordinate(0, 0),
        mode,
        prrs,
        t_recfg=100,
        prefer_virtualize_over_reconfig=prefer,
    )


def _ack(kind, node, status):
    return Message(50, kind, vaddr(node.x, node.y), vaddr(0, 0), (status,))


def _by_kind(out, kind):
    return [m for m in out.messages if m.kind == kind]


def _share_gcd(manager):
    """Put task 1 on GCD_NODE slot 0 and task 2 on slot 1."""
    manager.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    manager.handle_map_request(MapRequest(2, "GCD", HOST_B), 1)
    manager.inbox.append(_ack(MessageKind.ENABLE_ACK, GCD_NODE, ACK_OK))
    return manager.manager_step(2)


def test_idle_pe_of_the_requested_type_is_assigned():
    manager = _manager({GCD_NODE: "GCD", RSA_NODE: "RSA"})
    out = manager.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)

    (decision,) = out.decisions
    assert decision.kind == DecisionKind.ASSIGN
    assert (decision.node, decision.slot) == (GCD_NODE, SlotId.SLOT_0)
    (grant,) = out.messages
    assert grant.kind == MessageKind.MAP_GRANT
    assert grant.dst == HOST_A
    assert grant.payload == (1, 2, 1, 0)
    assert out.commands == [
        StatusUpdate(GCD_NODE, ControlCommand.set_task_status(SlotId.SLOT_0, TaskStatus.ACTIVE))
    ]


def test_second_task_enables_local1_then_gets_slot_one():
    manager = _manager({GCD_NODE: "GCD", RSA_NODE: "RSA"})
    manager.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    out = manager.handle_map_request(MapRequest(2, "GCD", HOST_B), 1)

    assert out.decisions[0].kind == DecisionKind.ENABLE_THEN_ASSIGN
    (enable,) = out.messages
    assert enable.kind == MessageKind.ENABLE_PORT
    assert enable.dst == vaddr(2, 1, 0)
    assert manager.directory[GCD_NODE].port == PortState.ENABLING
    assert not manager.settled

    manager.inbox.append(_ack(MessageKind.ENABLE_ACK, GCD_NODE, ACK_OK))
    out = manager.manager_step(2)
    (grant,) = _by_kind(out, MessageKind.MAP_GRANT)
    assert grant.payload == (2, 2, 1, 1)
    assert grant.dst == HOST_B
    assert manager.directory[GCD_NODE].port == PortState.ENABLED
    assert manager.slot_activity()[GCD_NODE] == (True, True)
    assert manager.settled


def test_nacked_enable_is_resent():
    manager = _manager({GCD_NODE: "GCD"})
    manager.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    manager.handle_map_request(MapRequest(2, "GCD", HOST_B), 1)

    manager.inbox.append(_ack(MessageKind.ENABLE_ACK, GCD_NODE, ACK_NACK))
    out = manager.manager_step(2)
    (retry,) = out.messages
    assert retry.kind == MessageKind.ENABLE_PORT
    assert manager.directory[GCD_NODE].port == PortState.ENABLING
    assert GCD_NODE in manager.parked_enable


def test_baseline_queues_until_release():
    manager = _manager({GCD_NODE: "GCD"}, mode=Mode.BASELINE)
    manager.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    out = manager.handle_map_request(MapRequest(2, "GCD", HOST_B), 1)
    assert out.decisions[0].kind == DecisionKind.QUEUED
    assert out.messages == []
    assert len(manager.pending) == 1

    out = manager.handle_release(1, 40)
    assert [m.kind for m in out.messages] == [MessageKind.RELEASE_ACK, MessageKind.MAP_GRANT]
    assert out.messages[0].payload == (1,)
    assert out.messages[1].payload == (2, 2, 1, 0)
    assert not manager.pending


def test_empty_region_is_reconfigured_then_assigned():
    manager = _manager({EMPTY_NODE: None})
    out = manager.handle_map_request(MapRequest(1, "RSA", HOST_A), 10)
    assert out.decisions[0].kind == DecisionKind.RECONFIG_THEN_ASSIGN
    assert out.commands == [Reconfigure(EMPTY_NODE, "RSA")]
    assert out.messages == []
    assert manager.next_event == 110

    assert manager.manager_step(109).messages == []
    out = manager.manager_step(110)
    (grant,) = out.messages
    assert grant.payload == (1, 1, 1, 0)
    assert manager.directory[EMPTY_NODE].status == PRRStatus.CONFIGURED
    assert manager.next_event is None


def test_release_of_slot_zero_keeps_local1_enabled():
    manager = _manager({GCD_NODE: "GCD"})
    _share_gcd(manager)

    out = manager.handle_release(1, 10)
    assert _by_kind(out, MessageKind.DISABLE_PORT) == []
    assert manager.directory[GCD_NODE].port == PortState.ENABLED

    out = manager.handle_release(2, 11)
    (disable,) = _by_kind(out, MessageKind.DISABLE_PORT)
    assert disable.dst == vaddr(2, 1, 0)
    assert manager.directory[GCD_NODE].port == PortState.DISABLING
    assert StatusUpdate(
        GCD_NODE, ControlCommand.set_task_status(SlotId.SLOT_1, TaskStatus.INACTIVE)
    ) in out.commands

    manager.inbox.append(_ack(MessageKind.DISABLE_ACK, GCD_NODE, ACK_OK))
    manager.manager_step(12)
    assert manager.directory[GCD_NODE].port == PortState.DISABLED
    assert manager.settled


def test_pending_request_is_dispatched_in_the_releasing_step():
    manager = _manager({GCD_NODE: "GCD"})
    _share_gcd(manager)
    out = manager.handle_map_request(MapRequest(3, "GCD", HOST_A), 5)
    assert out.decisions[0].kind == DecisionKind.QUEUED

    out = manager.handle_release(2, 20)
    (grant,) = _by_kind(out, MessageKind.MAP_GRANT)
    assert grant.payload == (3, 2, 1, 1)
    assert [d.kind for d in out.decisions] == [DecisionKind.ASSIGN]


def test_select_victim_prefers_least_recently_used():
    manager = _manager({GCD_NODE: "GCD", RSA_NODE: "RSA"})
    manager.directory[GCD_NODE].last_used = 5
    manager.directory[RSA_NODE].last_used = 3
    assert manager.select_victim("GCD") == RSA_NODE


def test_select_victim_ties_go_to_row_major_first():
    manager = _manager({RSA_NODE: "RSA", GCD_NODE: "GCD"})
    assert manager.select_victim("RSA") == GCD_NODE


def test_select_victim_none_when_everything_is_active():
    manager = _manager({GCD_NODE: "GCD"})
    manager.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    assert manager.select_victim("RSA") is None


def test_eviction_reconfigures_the_victim():
    manager = _manager({GCD_NODE: "GCD"}, mode=Mode.BASELINE)
    out = manager.handle_map_request(MapRequest(1, "RSA", HOST_A), 0)
    assert out.decisions[0].kind == DecisionKind.RECONFIG_THEN_ASSIGN
    assert out.commands == [Reconfigure(GCD_NODE, "RSA")]


def test_prefer_flag_shares_before_reconfiguring():
    prrs = {GCD_NODE: "GCD", EMPTY_NODE: None}

    default = _manager(prrs)
    default.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    out = default.handle_map_request(MapRequest(2, "GCD", HOST_B), 1)
    assert out.decisions[0].kind == DecisionKind.RECONFIG_THEN_ASSIGN

    sharing = _manager(prrs, prefer=True)
    sharing.handle_map_request(MapRequest(1, "GCD", HOST_A), 0)
    out = sharing.handle_map_request(MapRequest(2, "GCD", HOST_B), 1)
    assert out.decisions[0].kind == DecisionKind.ENABLE_THEN_ASSIGN


def test_empty_inbox_step_does_nothing():
    manager = _manager({GCD_NODE: "GCD"})
    out = manager.manager_step(0)
    assert out.messages == [] and out.commands == [] and out.decisions == []


def test_release_of_unknown_task():
    manager = _manager({GCD_NODE: "GCD"})
    with pytest.raises(UnknownTask):
        manager.handle_release(99, 0)


def test_unexpected_messages_are_faults():
    manager = _manager({GCD_NODE: "GCD"})
    manager.inbox.append(Message(1, MessageKind.COMPUTE_REP, HOST_A, vaddr(0, 0), (1, 2)))
    with pytest.raises(UnexpectedMessage):
        manager.manager_step(0)

    manager.inbox.append(_ack(MessageKind.ENABLE_ACK, GCD_NODE, ACK_OK))
    with pytest.raises(UnexpectedMessage):
        manager.manager_step(1)


def test_map_request_message_is_decoded():
    manager = _manager({EMPTY_NODE: None, RSA_NODE: "RSA"})
    manager.inbox.append(Message(4, MessageKind.MAP_REQ, HOST_A, vaddr(0, 0), (7, 1)))
    out = manager.manager_step(0)
    (grant,) = out.messages
    assert grant.payload == (7, 1, 2, 0)
    assert manager.messages_handled == 1


# ---------------------------------------------------------
# Whole-run protocol properties
# ---------------------------------------------------------


def _run_recording_deliveries(monkeypatch, config):
    delivered = []
    original = Simulation._record_packet

    def recording(self, msg, now):
        delivered.append((now, msg))
        original(self, msg, now)

    monkeypatch.setattr(Simulation, "_record_packet", recording)
    sim = build(config)
    sim.run()
    return sim, delivered


def test_slot_one_is_never_granted_before_its_port_is_enabled(monkeypatch, small_config):
    _, delivered = _run_recording_deliveries(monkeypatch, small_config(n_tasks=4, num_requests=3))

    enabled = {}
    slot_one_grants = 0
    for _, msg in delivered:
        node = msg.src.node
        if msg.kind == MessageKind.ENABLE_ACK and msg.payload[0] == ACK_OK:
            enabled[node] = True
        elif msg.kind == MessageKind.DISABLE_ACK and msg.payload[0] == ACK_OK:
            enabled[node] = False
        elif msg.kind == MessageKind.MAP_GRANT and msg.payload[3] == 1:
            slot_one_grants += 1
            assert enabled.get(MeshCoordinate(msg.payload[1], msg.payload[2])), msg
    assert slot_one_grants > 0


def test_baseline_run_never_touches_slot_one(monkeypatch, small_config):
    sim, delivered = _run_recording_deliveries(
        monkeypatch, small_config(n_tasks=4, num_requests=3, mode="baseline")
    )
    port_kinds = {
        MessageKind.ENABLE_PORT,
        MessageKind.ENABLE_ACK,
        MessageKind.DISABLE_PORT,
        MessageKind.DISABLE_ACK,
    }
    assert delivered
    for _, msg in delivered:
        assert msg.kind not in port_kinds
        assert msg.src.slot == SlotId.SLOT_0 and msg.dst.slot == SlotId.SLOT_0
        if msg.kind == MessageKind.MAP_GRANT:
            assert msg.payload[3] == 0
    assert all(e.port == PortState.DISABLED for e in sim.manager.directory.values())
    assert not any(n.router.has_port(PortId.LOCAL1) for n in sim.order)


@pytest.mark.parametrize("mode", ["vnoc", "baseline"])
def test_directory_mirrors_the_routers(small_config, mode):
    sim = build(small_config(n_tasks=4, num_requests=3, mode=mode))
    manager = sim.manager

    def check():
        for node, entry in manager.directory.items():
            vctrl = sim.nodes[node].router.vctrl
            if entry.port == PortState.ENABLED:
                assert vctrl.local1_enabled, (sim.cycle, node)
            elif entry.port == PortState.DISABLED:
                assert not vctrl.local1_enabled, (sim.cycle, node)
        for node, (slot0, slot1) in manager.slot_activity().items():
            vctrl = sim.nodes[node].router.vctrl
            assert (vctrl.status(SlotId.SLOT_0) == TaskStatus.ACTIVE) == slot0
            assert (vctrl.status(SlotId.SLOT_1) == TaskStatus.ACTIVE) == slot1

    while not (sim.all_done and sim.quiescent and manager.settled):
        assert sim.cycle < 1_000_000
        sim.step()
        check()

    for entry in manager.directory.values():
        assert entry.port == PortState.DISABLED
        assert entry.slots == [None, None]
