# sim_engine.py

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Callable, Deque, Dict, List, Optional, Tuple

from core_model import (
    Flit,
    MeshCoordinate,
    Message,
    MessageKind,
    Mode,
    SlotId,
    UnexpectedMessage,
    VNoCError,
)
from global_manager import GlobalManager, ManagerOutput, Reconfigure, StatusUpdate
from network_interface import SEND_QUEUE_CAPACITY, NetworkInterface
from processing_element import ReconfigurableRegion
from router import DEFAULT_BUFFER_DEPTH, OPPOSITE, ControlCommand, PortId, Router, neighbor
from run_stats import NetworkStats, PEStats, RunStats, TaskStats
from sim_config import InvalidConfig, SimConfig, config_digest, validate_config, workload_digest
from workload import HostNode, OperandPolicy, TaskHost, TaskSpec, generate_workload

logger = logging.getLogger(__name__)

TRACE_HEADER = (
    "cycle",
    "event",
    "node_x",
    "node_y",
    "port_or_slot",
    "packet_id",
    "flit_ordinal",
    "detail",
)


class WatchdogTimeout(VNoCError):
    def __init__(self, cycle: int, stuck: List[str]) -> None:
        self.cycle = cycle
        self.stuck = stuck
        summary = "; ".join(stuck[:8]) if stuck else "nothing in flight"
        super().__init__(f"watchdog expired at cycle {cycle}: {summary}")


# ---------------------------------------------------------
# Trace sink
# ---------------------------------------------------------


class Tracer:
    """
    CSV trace sink. With a path, records stream to that file; without one
    they are kept in `rows` (tests read them from there).
    """

    def __init__(self, path: Optional[str] = None) -> None:
        self.path = path
        self.rows: List[Tuple] = []
        self._fh: Optional[IO[str]] = None
        self._writer = None
        if path is not None:
            self._fh = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(TRACE_HEADER)

    def emit(
        self,
        cycle: int,
        event: str,
        node: MeshCoordinate,
        port_or_slot: str,
        packet_id: Optional[int],
        ordinal: Optional[int],
        detail: str,
    ) -> None:
        row = (
            cycle,
            event,
            node.x,
            node.y,
            port_or_slot,
            "" if packet_id is None else packet_id,
            "" if ordinal is None else ordinal,
            detail,
        )
        if self._writer is not None:
            self._writer.writerow(row)
        else:
            self.rows.append(row)

    def events(self, name: str) -> List[Tuple]:
        return [r for r in self.rows if r[1] == name]

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            self._writer = None

    def __enter__(self) -> Tracer:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------
# World
# ---------------------------------------------------------


class AttachmentKind(str, Enum):
    PRR = "prr"
    HOST = "host"
    MANAGER = "manager"
    NONE = "none"


@dataclass
class Node:
    coord: MeshCoordinate
    router: Router
    ni: NetworkInterface
    kind: AttachmentKind = AttachmentKind.NONE
    prr: Optional[ReconfigurableRegion] = None
    host: Optional[HostNode] = None
    manager: Optional[GlobalManager] = None
    outbox: Deque[Message] = field(default_factory=deque)
    delivered: List[Tuple[SlotId, Message, int]] = field(default_factory=list)


@dataclass(frozen=True)
class PacketRecord:
    kind: MessageKind
    src: MeshCoordinate
    dst: MeshCoordinate
    flits: int
    injected_at: int
    delivered_at: int

    @property
    def hops(self) -> int:
        return self.src.manhattan(self.dst)

    @property
    def latency(self) -> int:
        return self.delivered_at - self.injected_at


class Simulation:
    """
    Purpose:
        The cycle-driven kernel. Owns every router, NI and attachment and
        advances them in a fixed phase order, visiting nodes row-major:
        links and credits, routers, NIs, attachments, PRR timers.

    Example usage:
        >>> sim = build(parse_config("{}"))
        >>> stats = sim.run()
        >>> stats.makespan_cycles > 0
        True
    """

    def __init__(
        self,
        width: int,
        height: int,
        mode: Mode = Mode.VNOC,
        buffer_depth: int = DEFAULT_BUFFER_DEPTH,
        send_capacity: int = SEND_QUEUE_CAPACITY,
        watchdog: int = 50_000_000,
        tracer: Optional[Tracer] = None,
        config: Optional[SimConfig] = None,
    ) -> None:
        self.width = width
        self.height = height
        self.mode = Mode(mode)
        self.watchdog = watchdog
        self.tracer = tracer
        self.config = config
        self.cycle = 0

        self.nodes: Dict[MeshCoordinate, Node] = {}
        for y in range(height):
            for x in range(width):
                coord = MeshCoordinate(x, y)
                router = Router(
                    coord,
                    width,
                    height,
                    buffer_depth,
                    virtualizable=self.mode == Mode.VNOC,
                    tracer=tracer,
                )
                self.nodes[coord] = Node(coord, router, NetworkInterface(coord, send_capacity, tracer))
        self.order: List[Node] = list(self.nodes.values())

        self.manager: Optional[GlobalManager] = None
        self.tasks: List[TaskHost] = []
        self.links: Dict[Tuple[MeshCoordinate, PortId], Flit] = {}
        self.credit_latch: List[Tuple[MeshCoordinate, PortId]] = []
        self.injected_at: Dict[tuple, int] = {}
        self.packets: List[PacketRecord] = []
        self.flits_injected = 0
        self.flits_delivered = 0
        self.virtualized_cycles: Dict[MeshCoordinate, int] = {}
        self.makespan: Optional[int] = None
        self._sinks: Dict[MeshCoordinate, Callable[[SlotId, Message, int], bool]] = {}

    @classmethod
    def traffic_only(
        cls,
        width: int,
        height: int,
        mode: Mode = Mode.VNOC,
        buffer_depth: int = DEFAULT_BUFFER_DEPTH,
        local1_enabled: bool = False,
        tracer: Optional[Tracer] = None,
    ) -> Simulation:
        """A bare mesh whose NIs accept every packet; feed it with `send`."""
        sim = cls(width, height, mode, buffer_depth, watchdog=1 << 62, tracer=tracer)
        if local1_enabled and sim.mode == Mode.VNOC:
            for node in sim.order:
                node.router.apply_control(ControlCommand.enable_local1())
        return sim

    # ---------------------------------------------------------
    # Attachments
    # ---------------------------------------------------------

    def _claim(self, coord: MeshCoordinate, kind: AttachmentKind) -> Node:
        node = self.nodes.get(coord)
        if node is None:
            raise InvalidConfig(f"{kind.value} node {coord} is outside the mesh")
        if node.kind != AttachmentKind.NONE:
            raise InvalidConfig(f"node {coord} already hosts a {node.kind.value}")
        node.kind = kind
        return node

    def attach_manager(self, manager: GlobalManager) -> None:
        if self.manager is not None:
            raise InvalidConfig("a simulation has exactly one manager")
        node = self._claim(manager.node, AttachmentKind.MANAGER)
        node.manager = manager
        self.manager = manager

    def attach_prr(self, region: ReconfigurableRegion) -> None:
        node = self._claim(region.node, AttachmentKind.PRR)
        node.prr = region
        self.virtualized_cycles[region.node] = 0

    def attach_host(self, host: HostNode) -> None:
        node = self._claim(host.coord, AttachmentKind.HOST)
        node.host = host
        self.tasks.extend(host.tasks)

    def send(self, msg: Message) -> None:
        """Queue a message at its source node, as an attachment would."""
        self.nodes[msg.src.node].outbox.append(msg)

    def _sink(self, node: Node) -> Callable[[SlotId, Message, int], bool]:
        if node.kind == AttachmentKind.PRR:
            region = node.prr

            def to_pe(slot: SlotId, msg: Message, now: int) -> bool:
                if msg.kind != MessageKind.COMPUTE_REQ:
                    raise UnexpectedMessage(f"PE {node.coord} got {msg.kind.name} from {msg.src}")
                pe = region.pe
                if pe is None or not pe.has_space(slot):
                    return False
                pe.pe_enqueue(slot, msg, now)
                return True

            return to_pe
        if node.kind == AttachmentKind.MANAGER:

            def to_manager(slot: SlotId, msg: Message, now: int) -> bool:
                node.manager.inbox.append(msg)
                return True

            return to_manager
        if node.kind == AttachmentKind.HOST:

            def to_host(slot: SlotId, msg: Message, now: int) -> bool:
                node.host.inbox.append(msg)
                return True

            return to_host

        def collect(slot: SlotId, msg: Message, now: int) -> bool:
            node.delivered.append((slot, msg, now))
            return True

        return collect

    # ---------------------------------------------------------
    # One cycle
    # ---------------------------------------------------------

    def _apply(self, out: ManagerOutput, now: int) -> None:
        for cmd in out.commands:
            if isinstance(cmd, Reconfigure):
                self.nodes[cmd.node].prr.prr_reconfigure(cmd.pe_type, now)
            elif isinstance(cmd, StatusUpdate):
                self.nodes[cmd.node].router.apply_control(cmd.command, now)

    def step(self) -> None:
        """Advance the world by one cycle (or, when nothing moves, to the next timer)."""
        now = self.cycle

        # (1) link latches and credits
        arriving, self.links = self.links, {}
        for (coord, port), flit in arriving.items():
            self.nodes[coord].router.accept(port, flit, now)
        credits, self.credit_latch = self.credit_latch, []
        for coord, port in credits:
            self.nodes[coord].router.credit_return(port)

        # (2) routers
        ejected: Dict[MeshCoordinate, List[Tuple[SlotId, Flit]]] = {}
        for node in self.order:
            result = node.router.router_cycle(now, node.ni.local_ready)
            for port in result.injected:
                key = node.ni.injected_keys[port].popleft()
                self.injected_at[key] = now
            for port, flit in result.outgoing.items():
                if port.is_local:
                    ejected.setdefault(node.coord, []).append((port.slot, flit))
                else:
                    nx, ny = neighbor(node.coord, port)
                    self.links[(MeshCoordinate(nx, ny), OPPOSITE[port])] = flit
            for port in result.credits:
                if not port.is_local:
                    ux, uy = neighbor(node.coord, port)
                    self.credit_latch.append((MeshCoordinate(ux, uy), OPPOSITE[port]))

        # (3) network interfaces
        for node in self.order:
            ni = node.ni
            while node.outbox and ni.can_send:
                ni.ni_send(node.outbox.popleft())
            for slot, flit in ejected.get(node.coord, ()):
                self.flits_delivered += 1
                msg = ni.ni_receive_flit(slot, flit, now)
                if msg is not None:
                    self._record_packet(msg, now)
            sink = self._sinks.get(node.coord)
            if sink is None:
                sink = self._sinks[node.coord] = self._sink(node)
            ni.buffer_deliver(now, sink, node.router)
            if ni.inject(node.router, now) is not None:
                self.flits_injected += 1

        # (4) attachments
        for node in self.order:
            if node.kind == AttachmentKind.PRR:
                if node.prr.pe is not None:
                    reply = node.prr.pe.pe_step(now)
                    if reply is not None:
                        node.outbox.append(reply)
            elif node.kind == AttachmentKind.MANAGER:
                out = node.manager.manager_step(now)
                self._apply(out, now)
                node.outbox.extend(out.messages)
            elif node.kind == AttachmentKind.HOST:
                node.outbox.extend(node.host.step(now))

        # (5) PRR timers
        for node in self.order:
            if node.kind == AttachmentKind.PRR:
                node.prr.tick(now)

        # (6) advance
        nxt = now + 1
        if self.quiescent:
            timer = self.next_timer
            if timer is not None:
                nxt = max(nxt, timer)
            elif self.tasks and not self.all_done:
                nxt = max(nxt, self.watchdog)
            nxt = min(nxt, max(now + 1, self.watchdog))
        for coord in self.virtualized_cycles:
            if self.nodes[coord].router.vctrl.both_active:
                self.virtualized_cycles[coord] += nxt - now
        self.cycle = nxt

    def _record_packet(self, msg: Message, now: int) -> None:
        injected = self.injected_at.pop(msg.key, now)
        self.packets.append(
            PacketRecord(msg.kind, msg.src.node, msg.dst.node, msg.flit_count, injected, now)
        )

    # ---------------------------------------------------------
    # Introspection
    # ---------------------------------------------------------

    @property
    def quiescent(self) -> bool:
        """No flit, credit, packet, handoff or undelivered message anywhere."""
        if self.links or self.credit_latch:
            return False
        for node in self.order:
            if node.outbox or not node.router.is_empty or not node.ni.idle:
                return False
            if node.host is not None and node.host.inbox:
                return False
        return self.manager is None or not self.manager.inbox

    @property
    def next_timer(self) -> Optional[int]:
        times: List[int] = []
        for node in self.order:
            if node.prr is not None and node.prr.next_event is not None:
                times.append(node.prr.next_event)
            elif node.host is not None and node.host.next_event is not None:
                times.append(node.host.next_event)
        if self.manager is not None and self.manager.next_event is not None:
            times.append(self.manager.next_event)
        return min(times) if times else None

    @property
    def all_done(self) -> bool:
        return all(t.done for t in self.tasks)

    def flits_in_flight(self) -> int:
        buffered = sum(len(b) for n in self.order for b in n.router.in_buf.values())
        return buffered + len(self.links)

    def stuck_entities(self) -> List[str]:
        stuck: List[str] = []
        for task in self.tasks:
            if not task.done:
                stuck.append(f"task {task.spec.task_id} {task.phase.value} on host {task.host_node}")
        for node in self.order:
            held = sum(len(b) for b in node.router.in_buf.values())
            if held:
                stuck.append(f"router {node.coord} holds {held} flits")
            if not node.ni.idle:
                stuck.append(f"NI {node.coord} busy")
        if self.manager is not None and self.manager.pending:
            stuck.append(f"manager has {len(self.manager.pending)} pending map requests")
        return stuck

    # ---------------------------------------------------------
    # Running
    # ---------------------------------------------------------

    def _check_watchdog(self) -> None:
        if self.cycle >= self.watchdog:
            stuck = self.stuck_entities()
            logger.error(f"watchdog at cycle {self.cycle}: {len(stuck)} stuck entities")
            raise WatchdogTimeout(self.cycle, stuck)

    def drain(self, max_cycles: Optional[int] = None) -> int:
        """Step until every queued message is delivered; returns the cycle count."""
        limit = self.cycle + max_cycles if max_cycles is not None else self.watchdog
        while not self.quiescent:
            if self.cycle >= limit:
                raise WatchdogTimeout(self.cycle, self.stuck_entities())
            self.step()
        return self.cycle

    def run(self) -> RunStats:
        """
        Purpose:
            Step until every task is Done, then keep stepping until the
            network and the manager have settled.

        Returns:
            RunStats of the run; makespan is the last task finish cycle.

        Raises:
            WatchdogTimeout: the watchdog cycle was reached first.
            SimulationFault: propagated from any component.
        """
        if self.config is None:
            raise VNoCError("run() needs a simulation built from a SimConfig")
        logger.info(
            f"running {self.mode.value}: {len(self.tasks)} tasks on "
            f"{self.width}x{self.height} mesh, seed {self.config.seed}"
        )
        while not self.all_done:
            self._check_watchdog()
            self.step()
        self.makespan = max(t.finish_cycle for t in self.tasks)
        while not (self.quiescent and (self.manager is None or self.manager.settled)):
            self._check_watchdog()
            self.step()
        logger.info(f"{self.mode.value} finished: makespan {self.makespan} cycles")
        return self.stats()

    def stats(self) -> RunStats:
        makespan = self.makespan if self.makespan is not None else self.cycle
        tasks = []
        for t in sorted(self.tasks, key=lambda t: t.spec.task_id):
            lat = t.latencies
            tasks.append(
                TaskStats(
                    task_id=t.spec.task_id,
                    pe_type=t.spec.pe_type,
                    host=(t.host_node.x, t.host_node.y),
                    requests=t.completed,
                    start=t.start_cycle,
                    finish=t.finish_cycle,
                    mean_latency=round(sum(lat) / len(lat), 4) if lat else 0.0,
                    max_latency=max(lat) if lat else 0,
                )
            )
        pes = []
        for node in self.order:
            if node.prr is None:
                continue
            busy = node.prr.total_busy_cycles
            pes.append(
                PEStats(
                    node=(node.coord.x, node.coord.y),
                    pe_type=node.prr.pe_type,
                    busy_cycles=busy,
                    utilization=round(min(1.0, busy / makespan), 6) if makespan else 0.0,
                    served=node.prr.total_served,
                    reconfig_count=node.prr.reconfig_count,
                    virtualized_cycles=self.virtualized_cycles[node.coord],
                )
            )
        latencies = [p.latency for p in self.packets]
        network = NetworkStats(
            packets=len(self.packets),
            flits=self.flits_delivered,
            mean_packet_latency=round(sum(latencies) / len(latencies), 4) if latencies else 0.0,
        )
        return RunStats(
            mode=self.mode,
            seed=self.config.seed,
            config_digest=config_digest(self.config),
            workload_digest=workload_digest(self.config),
            makespan_cycles=makespan,
            cycles_simulated=self.cycle,
            tasks=tasks,
            pes=pes,
            network=network,
        )


# ---------------------------------------------------------
# Construction from a config
# ---------------------------------------------------------


def build(config: SimConfig, tracer: Optional[Tracer] = None) -> Simulation:
    """
    Purpose:
        Lay out a validated config on a mesh: routers of the configured
        mode (Local1 present but disabled in vnoc mode), the manager, PRRs
        with their initial PEs, and hosts running the generated tasks.

    Raises:
        InvalidConfig: overlapping roles, missing manager, no hosts.
    """
    validate_config(config)
    sim = Simulation(
        config.mesh.width,
        config.mesh.height,
        config.mode,
        config.router.buffer_depth,
        config.router.send_queue,
        config.watchdog,
        tracer,
        config,
    )

    manager_node = sim.nodes[config.manager_node]
    sim.attach_manager(
        GlobalManager(
            config.manager_node,
            config.mode,
            config.prr_nodes,
            config.service.t_recfg,
            config.policy.prefer_virtualize_over_reconfig,
            next_id=manager_node.ni.next_message_id,
            tracer=tracer,
        )
    )

    for coord, pe_type in config.prr_nodes.items():
        sim.attach_prr(
            ReconfigurableRegion(
                coord,
                config.service,
                config.pe.queue_capacity,
                initial_type=pe_type,
                next_id=sim.nodes[coord].ni.next_message_id,
                tracer=tracer,
            )
        )

    wl = config.workload
    base = TaskSpec(0, "GCD", wl.num_requests, wl.think_cycles, wl.arrival_cycle)
    specs = generate_workload(
        wl.n_tasks, wl.mix, base, config.seed, wl.arrival_interval, wl.arrival_cycles
    )
    policy = OperandPolicy(
        wl.rsa_exponent,
        wl.rsa_modulus,
        {k: tuple(v) for k, v in wl.fixed_operands.items()},
    )
    hosts = [HostNode(coord) for coord in config.host_nodes]
    for i, spec in enumerate(specs):
        host = hosts[i % len(hosts)]
        host.add(
            TaskHost(
                spec,
                host.coord,
                sim.manager.address,
                policy,
                sim.nodes[host.coord].ni.next_message_id,
            )
        )
    for host in hosts:
        sim.attach_host(host)

    logger.info(
        f"built {config.mode.value} {config.mesh.width}x{config.mesh.height} mesh: "
        f"{len(config.prr_nodes)} PRRs, {len(hosts)} hosts, {len(specs)} tasks"
    )
    return sim
