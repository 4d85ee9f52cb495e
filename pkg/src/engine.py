"""
Discrete-event core of the simulator.

`Engine` wraps a `simpy.Environment` as the virtual clock: one-shot actions are plain
timeouts with a callback, traffic sources are simpy processes. Every directed link has a
`LinkQueue` (FIFO, serialization + propagation delay, tail drop). `Fabric` holds the
per-role packet handlers (core replication, PE block/unblock, tree flooding at switches,
unicast forwarding, host delivery).
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Protocol, Set, Tuple, Union

import simpy

from .errors import SchedulingError, TopologyError
from .topology import Link, LinkStats, MulticastTree, Role, Topology

logger = logging.getLogger(__name__)

DEFAULT_PKT_SIZE = 1500


class PacketKind(str, Enum):
    BUM = "BUM"
    BACKGROUND = "BACKGROUND"
    CONTROL = "CONTROL"


class ForwardingStatus(str, Enum):
    BLOCKED = "BLOCKED"
    UNBLOCKED = "UNBLOCKED"


@dataclass(frozen=True, order=True)
class Event:
    time: float
    insertion_seq: int
    label: str = field(default="", compare=False)
    action: Callable[[], None] = field(default=lambda: None, compare=False, repr=False)


@dataclass
class Packet:
    kind: PacketKind
    stream: str
    seq: int
    size: int
    src: str
    dst: Optional[str] = None
    vni: Optional[int] = None
    # Egress tree chosen by the forwarding PE; None until the packet enters the DC.
    tree_id: Optional[str] = None
    stamp_path: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError(f"packet {self.stream}#{self.seq}: size must be > 0")
        if self.seq < 0:
            raise ValueError(f"packet {self.stream}#{self.seq}: seq must be >= 0")
        if self.kind is PacketKind.BUM and self.vni is None:
            raise ValueError(f"BUM packet {self.stream}#{self.seq} carries no vni")

    def fork(self) -> "Packet":
        return replace(self, stamp_path=list(self.stamp_path))


class PacketLedger(Protocol):
    """Copy-level bookkeeping the data plane reports to (see traffic.StreamLedger)."""

    def fanout(self, packet: Packet, copies: int) -> None: ...

    def dropped(self, packet: Packet) -> None: ...

    def blocked(self, packet: Packet) -> None: ...

    def consumed(self, packet: Packet) -> None: ...

    def record_delivery(self, sink: str, packet: Packet, now: float) -> None: ...

    def accounts(self) -> Dict[str, object]: ...


class LinkQueue:
    """Output queue of one directed link; occupancy counts the packet being serialized."""

    def __init__(self, link: Link):
        self.link = link
        self.id = link.id
        self.busy_until = 0.0
        self.drops = 0
        self.bytes_total = 0
        self.bytes_interval = 0
        self._departures: Deque[float] = deque()

    def occupancy(self, now: float) -> int:
        while self._departures and self._departures[0] <= now:
            self._departures.popleft()
        return len(self._departures)

    def admit(self, now: float, size: int) -> Optional[float]:
        """Returns the arrival time at the far end, or None on tail drop."""
        if self.occupancy(now) >= self.link.queue_capacity:
            self.drops += 1
            return None
        start = max(now, self.busy_until)
        depart = start + size * 8 / self.link.bandwidth
        self.busy_until = depart
        self._departures.append(depart)
        return depart + self.link.prop_delay


@dataclass(frozen=True)
class Transition:
    time: float
    pe: str
    vni: int
    status: ForwardingStatus
    cause: str


class DfTable:
    """Per (PE, vni) BUM forwarding status shared by the data plane and the control planes."""

    def __init__(self) -> None:
        self._status: Dict[Tuple[str, int], ForwardingStatus] = {}
        self._last_unblocked: Dict[int, str] = {}
        self._changes: Dict[int, List[Tuple[float, str, str]]] = {}
        self.log: List[Transition] = []

    def status(self, pe: str, vni: int) -> ForwardingStatus:
        return self._status.get((pe, vni), ForwardingStatus.BLOCKED)

    def is_unblocked(self, pe: str, vni: int) -> bool:
        return self._status.get((pe, vni)) is ForwardingStatus.UNBLOCKED

    def unblocked(self, vni: int) -> List[str]:
        return sorted(pe for (pe, v), s in self._status.items() if v == vni and s is ForwardingStatus.UNBLOCKED)

    def set(self, pe: str, vni: int, status: ForwardingStatus, now: float, cause: str) -> bool:
        if self.status(pe, vni) is status and (pe, vni) in self._status:
            return False
        self._status[(pe, vni)] = status
        self.log.append(Transition(now, pe, vni, status, cause))
        logger.debug("t=%.6f %s vni %s -> %s (%s)", now, pe, vni, status.value, cause)
        if status is ForwardingStatus.UNBLOCKED:
            previous = self._last_unblocked.get(vni)
            if previous is not None and previous != pe and cause != "bootstrap":
                self._changes.setdefault(vni, []).append((now, previous, pe))
            self._last_unblocked[vni] = pe
        return True

    def df_changes(self, vni: int) -> List[Tuple[float, str, str]]:
        """(time, from_pe, to_pe) each time a different PE took over forwarding for vni."""
        return list(self._changes.get(vni, []))


@dataclass
class SimulationReport:
    ended_at: float
    accounts: Dict[str, object]
    link_bytes: Dict[str, int]
    link_drops: Dict[str, int]
    intervals: List[LinkStats]
    df_log: List[Transition]
    events_executed: int


class Engine:
    """Virtual clock, event queue and link queues of one simulation instance."""

    def __init__(self, topology: Topology, ledger: PacketLedger):
        self.env = simpy.Environment()
        self.topology = topology
        self.ledger = ledger
        self.queues: Dict[str, LinkQueue] = {link.id: LinkQueue(link) for link in topology.links.values()}
        self.df_table = DfTable()
        self.intervals: List[LinkStats] = []
        self.receive: Optional[Callable[[str, Packet, Optional[str]], None]] = None
        self._insertion_seq = 0
        self._executed = 0
        self._poll_listeners: List[Callable[[float, LinkStats], None]] = []

    @property
    def now(self) -> float:
        return self.env.now

    def schedule(self, time: float, action: Callable[[], None], label: str = "") -> Event:
        now = self.env.now
        if time < now:
            raise SchedulingError(f"cannot schedule {label or 'event'} at t={time} before clock t={now}")
        self._insertion_seq += 1
        event = Event(time, self._insertion_seq, label, action)
        timeout = self.env.timeout(time - now)
        timeout.callbacks.append(lambda _ev: self._execute(event))
        return event

    def schedule_in(self, delay: float, action: Callable[[], None], label: str = "") -> Event:
        return self.schedule(self.env.now + delay, action, label)

    def _execute(self, event: Event) -> None:
        self._executed += 1
        event.action()

    def process(self, generator) -> simpy.Process:
        return self.env.process(generator)

    def queue(self, link: Union[Link, str]) -> LinkQueue:
        lid = link if isinstance(link, str) else link.id
        try:
            return self.queues[lid]
        except KeyError as exc:
            raise TopologyError(f"unknown link {lid}") from exc

    def transmit(self, link: Union[Link, str], packet: Packet) -> bool:
        """Enqueue packet on link; False when it was tail-dropped."""
        queue = self.queue(link)
        arrival = queue.admit(self.env.now, packet.size)
        if arrival is None:
            self.ledger.dropped(packet)
            return False
        prev, node = queue.link.a, queue.link.b
        self.schedule(arrival, lambda: self._arrive(queue, node, packet, prev))
        return True

    def _arrive(self, queue: LinkQueue, node: str, packet: Packet, prev: str) -> None:
        queue.bytes_total += packet.size
        queue.bytes_interval += packet.size
        if self.receive is None:
            self.ledger.consumed(packet)
            return
        self.receive(node, packet, prev)

    def start_polling(self, interval: float) -> None:
        if interval <= 0:
            raise ValueError("polling interval must be > 0")
        self.env.process(self._poll_loop(interval))

    def add_poll_listener(self, listener: Callable[[float, LinkStats], None]) -> None:
        self._poll_listeners.append(listener)

    def _poll_loop(self, interval: float):
        while True:
            yield self.env.timeout(interval)
            stats = self.snapshot(interval)
            self.intervals.append(stats)
            for listener in self._poll_listeners:
                listener(self.env.now, stats)

    def snapshot(self, interval: float) -> LinkStats:
        carried = {}
        for lid, queue in self.queues.items():
            carried[lid] = queue.bytes_interval
            queue.bytes_interval = 0
        bandwidth = {lid: queue.link.bandwidth for lid, queue in self.queues.items()}
        return LinkStats(interval=interval, ends_at=self.env.now, bytes_carried=carried, bandwidth=bandwidth)

    def run_until(self, t_end: float) -> SimulationReport:
        if t_end < self.env.now:
            raise SchedulingError(f"run_until({t_end}) is before clock t={self.env.now}")
        while self.env.peek() <= t_end:
            self.env.step()
        if t_end > self.env.now:
            self.env.run(until=t_end)
        return self.report()

    def report(self) -> SimulationReport:
        return SimulationReport(
            ended_at=self.env.now,
            accounts=self.ledger.accounts(),
            link_bytes={lid: q.bytes_total for lid, q in self.queues.items()},
            link_drops={lid: q.drops for lid, q in self.queues.items()},
            intervals=list(self.intervals),
            df_log=list(self.df_table.log),
            events_executed=self._executed,
        )


class Fabric:
    """Packet handlers of every node role; registered as the engine's receive hook."""

    def __init__(self, engine: Engine, topology: Topology):
        self.engine = engine
        self.topology = topology
        self.ledger = engine.ledger
        self.df_table = engine.df_table
        self.up_pes: Set[str] = set()
        self.trees: Dict[str, MulticastTree] = {}
        self.rules: Dict[str, Set[str]] = {}
        self.pe_egress: Dict[Tuple[str, int], str] = {}
        self._routes: Dict[Tuple[str, str], Tuple[str, ...]] = {}
        self._next_hop: Dict[Tuple[str, str, str], str] = {}
        engine.receive = self.receive

    def install_rules(self, tree: MulticastTree) -> None:
        self.trees[tree.id] = tree
        for node in tree.nodes:
            if node != tree.pe:
                self.rules.setdefault(node, set()).add(tree.id)
        logger.debug("t=%.6f rules installed for tree %s", self.engine.now, tree.id)

    def retire_rules(self, tree: MulticastTree) -> None:
        for node in tree.nodes:
            self.rules.get(node, set()).discard(tree.id)
        logger.debug("t=%.6f rules retired for tree %s", self.engine.now, tree.id)

    def has_rule(self, node: str, tree_id: str) -> bool:
        return tree_id in self.rules.get(node, ())

    def set_egress(self, pe: str, vni: int, tree: MulticastTree) -> None:
        self.trees[tree.id] = tree
        self.pe_egress[(pe, vni)] = tree.id

    def inject(self, packet: Packet) -> None:
        """A source host emits packet; it is handled as if it had arrived at the host."""
        self.receive(packet.src, packet, None)

    def receive(self, node: str, packet: Packet, prev: Optional[str]) -> None:
        packet.stamp_path.append(node)
        if packet.kind is PacketKind.BACKGROUND:
            self._unicast(node, packet)
            return
        role = self.topology.nodes[node].role
        if role is Role.HOST:
            self._bum_at_host(node, packet, prev)
        elif role is Role.CORE:
            self._bum_at_core(node, packet)
        elif role is Role.PE:
            self._bum_at_pe(node, packet, prev)
        else:
            self._bum_at_switch(node, packet, prev)

    def route(self, src: str, dst: str) -> Tuple[str, ...]:
        key = (src, dst)
        if key not in self._routes:
            path = self.topology.route(src, dst)
            self._routes[key] = path
            for here, there in zip(path, path[1:]):
                self._next_hop[(src, dst, here)] = there
        return self._routes[key]

    def _unicast(self, node: str, packet: Packet) -> None:
        if node == packet.dst:
            self.ledger.record_delivery(node, packet, self.engine.now)
            return
        self.route(packet.src, packet.dst)
        nxt = self._next_hop.get((packet.src, packet.dst, node))
        if nxt is None:
            self.ledger.dropped(packet)
            return
        self.engine.transmit(self.topology.link(node, nxt), packet)

    def _bum_at_host(self, node: str, packet: Packet, prev: Optional[str]) -> None:
        if prev is None:
            uplinks = self.topology.neighbours(node)
            if not uplinks:
                self.ledger.dropped(packet)
                return
            self.engine.transmit(self.topology.link(node, uplinks[0]), packet)
        elif node == packet.dst:
            self.ledger.record_delivery(node, packet, self.engine.now)
        else:
            self.ledger.consumed(packet)

    def _bum_at_core(self, node: str, packet: Packet) -> None:
        net = self.topology.network(packet.vni)
        targets = [
            pe
            for pe in self.topology.network_pes(net)
            if pe in self.up_pes and (node, pe) in self.topology.links
        ]
        if not targets:
            self.ledger.blocked(packet)
            return
        self._send_copies(node, packet, targets)

    def _bum_at_pe(self, node: str, packet: Packet, prev: Optional[str]) -> None:
        if packet.tree_id is not None:
            # Came back out of the fabric; PEs are tree leaves.
            self.ledger.consumed(packet)
            return
        if not self.df_table.is_unblocked(node, packet.vni):
            self.ledger.blocked(packet)
            return
        tree_id = self.pe_egress.get((node, packet.vni))
        if tree_id is None:
            self.ledger.dropped(packet)
            return
        packet.tree_id = tree_id
        self._flood(node, packet, prev, self.trees[tree_id])

    def _bum_at_switch(self, node: str, packet: Packet, prev: Optional[str]) -> None:
        if packet.tree_id is None or not self.has_rule(node, packet.tree_id):
            self.ledger.dropped(packet)
            return
        self._flood(node, packet, prev, self.trees[packet.tree_id])

    def _flood(self, node: str, packet: Packet, prev: Optional[str], tree: MulticastTree) -> None:
        targets = [peer for peer in tree.neighbours(node) if peer != prev]
        if self.topology.nodes[node].role is Role.TOR and packet.dst in self.topology.attached_hosts(node):
            targets.append(packet.dst)
        if not targets:
            self.ledger.consumed(packet)
            return
        self._send_copies(node, packet, targets)

    def _send_copies(self, node: str, packet: Packet, targets: List[str]) -> None:
        self.ledger.fanout(packet, len(targets))
        for i, target in enumerate(targets):
            copy = packet if i == len(targets) - 1 else packet.fork()
            self.engine.transmit(self.topology.link(node, target), copy)
