"""
Network graph of the multi-homed leaf-spine fabric and the candidate BUM delivery trees.

A `Topology` is immutable once built. Candidate trees are shortest-path trees rooted at a
spine (the RP) that reach every participating TOR and exactly one PE.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from .errors import TopologyError

logger = logging.getLogger(__name__)

GBPS = 1e9
DEFAULT_DELAY_S = 0.001
DEFAULT_QUEUE_PKTS = 100
# Larger than any achievable sum of utilizations over a tree.
CONGESTED_WEIGHT = 1e6


class Role(str, Enum):
    PE = "PE"
    SPINE = "SPINE"
    TOR = "TOR"
    HOST = "HOST"
    CORE = "CORE"


def link_id(a: str, b: str) -> str:
    return f"{a}->{b}"


@dataclass(frozen=True)
class Node:
    id: str
    role: Role
    ordinal: int = 0


@dataclass(frozen=True)
class Link:
    """One direction of a full-duplex link."""

    a: str
    b: str
    bandwidth: float
    prop_delay: float
    queue_capacity: int = DEFAULT_QUEUE_PKTS
    congested: bool = False

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise TopologyError(f"link {self.id}: bandwidth must be > 0")
        if self.prop_delay < 0:
            raise TopologyError(f"link {self.id}: prop_delay must be >= 0")
        if self.queue_capacity < 1:
            raise TopologyError(f"link {self.id}: queue_capacity must be >= 1")

    @property
    def id(self) -> str:
        return link_id(self.a, self.b)


@dataclass(frozen=True)
class LogicalNetwork:
    """A VXLAN segment bound to one Ethernet Segment of one EVI (vni doubles as Ethernet Tag)."""

    vni: int
    participating_tors: FrozenSet[str]
    esi: str
    evi: str
    # Empty means every PE in the topology is attached to the segment.
    pes: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        if self.vni <= 0:
            raise TopologyError(f"network vni {self.vni}: must be positive")
        if not self.participating_tors:
            raise TopologyError(f"network vni {self.vni}: participating_tors is empty")
        if not self.esi or not self.evi:
            raise TopologyError(f"network vni {self.vni}: esi and evi must be non-empty")


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    bandwidth_bps: float = GBPS
    delay_s: float = DEFAULT_DELAY_S
    queue_pkts: int = DEFAULT_QUEUE_PKTS
    congested: bool = False
    duplex: bool = True


@dataclass(frozen=True)
class TopologySpec:
    """Topology section of a scenario: a preset name or an explicit node/link table."""

    preset: Optional[str] = None
    nodes: Tuple[Tuple[str, Role], ...] = ()
    links: Tuple[LinkSpec, ...] = ()
    networks: Tuple[LogicalNetwork, ...] = ()


@dataclass(frozen=True)
class MulticastTree:
    id: str
    rp: str
    pe: str
    vni: int
    # Oriented away from the PE, i.e. in the direction BUM traffic flows.
    links: Tuple[Link, ...]
    leaves: FrozenSet[str]

    @cached_property
    def adjacency(self) -> Dict[str, Tuple[str, ...]]:
        adj: Dict[str, set] = defaultdict(set)
        for link in self.links:
            adj[link.a].add(link.b)
            adj[link.b].add(link.a)
        return {node: tuple(sorted(peers)) for node, peers in adj.items()}

    @property
    def nodes(self) -> FrozenSet[str]:
        return frozenset(self.adjacency)

    def neighbours(self, node: str) -> Tuple[str, ...]:
        return self.adjacency.get(node, ())

    def link_ids(self) -> List[str]:
        return [link.id for link in self.links]


@dataclass(frozen=True)
class LinkStats:
    """Per directed link byte counters for one polling interval."""

    interval: float
    ends_at: float
    bytes_carried: Mapping[str, int]
    bandwidth: Mapping[str, float]

    def utilization(self, lid: str) -> float:
        try:
            carried = self.bytes_carried[lid]
            bandwidth = self.bandwidth[lid]
        except KeyError as exc:
            raise TopologyError(f"no counters for link {lid}") from exc
        return carried * 8 / (bandwidth * self.interval)

    def max_utilization(self, links: Iterable[Link]) -> float:
        return max((self.utilization(link.id) for link in links if not link.congested), default=0.0)

    @classmethod
    def from_utilization(
        cls,
        utilization: Mapping[str, float],
        bandwidth: Mapping[str, float],
        interval: float = 1.0,
        ends_at: float = 0.0,
    ) -> "LinkStats":
        carried = {lid: util * bandwidth[lid] * interval / 8 for lid, util in utilization.items()}
        return cls(interval=interval, ends_at=ends_at, bytes_carried=carried, bandwidth=dict(bandwidth))


class Topology:
    """Validated, read-only node/link graph plus the logical networks running over it."""

    def __init__(
        self,
        nodes: Iterable[Tuple[str, Role]],
        links: Iterable[Link],
        networks: Iterable[LogicalNetwork] = (),
    ):
        roles: Dict[str, Role] = {}
        for node_id, role in nodes:
            if node_id in roles:
                raise TopologyError(f"duplicate node id {node_id!r}")
            roles[node_id] = Role(role)

        self.nodes: Dict[str, Node] = {}
        for role in Role:
            members = sorted(node_id for node_id, r in roles.items() if r is role)
            for ordinal, node_id in enumerate(members):
                self.nodes[node_id] = Node(node_id, role, ordinal)

        self.links: Dict[Tuple[str, str], Link] = {}
        for link in links:
            for end in (link.a, link.b):
                if end not in self.nodes:
                    raise TopologyError(f"link {link.id}: dangling endpoint {end!r}")
            if (link.a, link.b) in self.links:
                raise TopologyError(f"duplicate link {link.id}")
            self.links[(link.a, link.b)] = link
        for a, b in self.links:
            if (b, a) not in self.links:
                raise TopologyError(f"link {link_id(a, b)} has no reverse link {link_id(b, a)}")

        self.networks: Dict[int, LogicalNetwork] = {}
        for net in networks:
            self._check_network(net)
            if net.vni in self.networks:
                raise TopologyError(f"duplicate network vni {net.vni}")
            self.networks[net.vni] = net

        self.graph = nx.DiGraph()
        for node in self.nodes.values():
            self.graph.add_node(node.id, role=node.role)
        for link in self.links.values():
            self.graph.add_edge(link.a, link.b, link=link)
        self.open_graph = nx.DiGraph(
            (link.a, link.b) for link in self.links.values() if not link.congested
        )
        self.open_graph.add_nodes_from(self.nodes)

    def _check_network(self, net: LogicalNetwork) -> None:
        for tor in net.participating_tors:
            if self.role(tor) is not Role.TOR:
                raise TopologyError(f"network vni {net.vni}: {tor!r} is not a TOR")
        for pe in net.pes:
            if self.role(pe) is not Role.PE:
                raise TopologyError(f"network vni {net.vni}: {pe!r} is not a PE")

    def role(self, node_id: str) -> Role:
        try:
            return self.nodes[node_id].role
        except KeyError as exc:
            raise TopologyError(f"unknown node {node_id!r}") from exc

    def by_role(self, role: Role) -> List[str]:
        return sorted(node.id for node in self.nodes.values() if node.role is role)

    @property
    def pes(self) -> List[str]:
        return self.by_role(Role.PE)

    @property
    def spines(self) -> List[str]:
        return self.by_role(Role.SPINE)

    @property
    def tors(self) -> List[str]:
        return self.by_role(Role.TOR)

    def link(self, a: str, b: str) -> Link:
        try:
            return self.links[(a, b)]
        except KeyError as exc:
            raise TopologyError(f"unknown link {link_id(a, b)}") from exc

    def neighbours(self, node_id: str) -> List[str]:
        return sorted(self.graph.successors(node_id))

    def attached_hosts(self, node_id: str) -> List[str]:
        return [peer for peer in self.neighbours(node_id) if self.nodes[peer].role is Role.HOST]

    def network(self, vni: int) -> LogicalNetwork:
        try:
            return self.networks[vni]
        except KeyError as exc:
            raise TopologyError(f"unknown network vni {vni}") from exc

    def network_pes(self, net: LogicalNetwork) -> List[str]:
        return sorted(net.pes) if net.pes else self.pes

    def networks_of_pe(self, pe: str) -> List[LogicalNetwork]:
        return [net for _, net in sorted(self.networks.items()) if pe in self.network_pes(net)]

    def route(self, src: str, dst: str) -> Tuple[str, ...]:
        """Hop-count shortest path avoiding congested links and host transit; ties by lowest link id."""
        allowed = {n for n, node in self.nodes.items() if node.role is not Role.HOST} | {src, dst}
        graph = self.open_graph.subgraph(allowed)
        parents = _bfs_parents(graph, src)
        if dst != src and dst not in parents:
            raise TopologyError(f"no route from {src!r} to {dst!r}")
        return tuple(_path_from_root(parents, src, dst))

    def without(self, node_ids: Iterable[str]) -> "Topology":
        """A copy with the given nodes, their links and any reference to them removed."""
        gone = set(node_ids)
        nodes = [(n.id, n.role) for n in self.nodes.values() if n.id not in gone]
        links = [l for l in self.links.values() if l.a not in gone and l.b not in gone]
        networks = []
        for net in self.networks.values():
            tors = frozenset(net.participating_tors - gone)
            if tors:
                networks.append(
                    LogicalNetwork(net.vni, tors, net.esi, net.evi, frozenset(net.pes - gone))
                )
        return Topology(nodes, links, networks)


def _bfs_parents(graph: nx.DiGraph, root: str) -> Dict[str, str]:
    if root not in graph:
        return {}
    preds = nx.predecessor(graph, root)
    return {v: min(ps, key=lambda u: link_id(u, v)) for v, ps in preds.items() if ps}


def _path_from_root(parents: Mapping[str, str], root: str, target: str) -> List[str]:
    path = [target]
    while path[-1] != root:
        path.append(parents[path[-1]])
    path.reverse()
    return path


def enumerate_trees(
    topology: Topology,
    net: LogicalNetwork,
    rps: Optional[Sequence[str]] = None,
) -> List[MulticastTree]:
    """One candidate tree per (spine RP, PE) pair that can reach all participating TORs."""
    topology._check_network(net)
    spines = topology.spines if rps is None else sorted(rps)
    for rp in spines:
        if topology.role(rp) is not Role.SPINE:
            raise TopologyError(f"RP {rp!r} is not a spine")
    pes = topology.network_pes(net)
    if not spines or not pes:
        raise TopologyError(f"network vni {net.vni}: need at least one spine and one PE")

    trees = []
    for rp in spines:
        for pe in pes:
            tree = _build_tree(topology, net, rp, pe)
            if tree is not None:
                trees.append(tree)
    if not trees:
        raise TopologyError(f"network vni {net.vni}: no candidate multicast tree exists")
    trees.sort(key=lambda t: t.id)
    logger.debug("vni %s: %d candidate trees %s", net.vni, len(trees), [t.id for t in trees])
    return trees


def _build_tree(
    topology: Topology, net: LogicalNetwork, rp: str, pe: str
) -> Optional[MulticastTree]:
    allowed = set(topology.spines) | set(topology.tors) | {pe}
    parents = _bfs_parents(topology.open_graph.subgraph(allowed), rp)

    edges = set()
    for target in sorted(net.participating_tors) + [pe]:
        if target != rp and target not in parents:
            return None
        node = target
        while node != rp:
            parent = parents[node]
            edges.add(frozenset((parent, node)))
            node = parent

    adjacency: Dict[str, set] = defaultdict(set)
    for edge in edges:
        a, b = tuple(edge)
        adjacency[a].add(b)
        adjacency[b].add(a)

    oriented = []
    order, seen = [pe], {pe}
    for node in order:
        for peer in sorted(adjacency[node]):
            if peer not in seen:
                seen.add(peer)
                order.append(peer)
                oriented.append(topology.link(node, peer))

    tree = MulticastTree(
        id=f"{net.vni}:{rp}/{pe}",
        rp=rp,
        pe=pe,
        vni=net.vni,
        links=tuple(oriented),
        leaves=frozenset(net.participating_tors),
    )
    validate_tree(tree, topology)
    return tree


def validate_tree(tree: MulticastTree, topology: Topology) -> None:
    graph = nx.Graph((link.a, link.b) for link in tree.links)
    graph.add_nodes_from({tree.rp, tree.pe} | set(tree.leaves))
    if not nx.is_tree(graph):
        raise TopologyError(f"tree {tree.id}: links do not form a tree")
    pes = [n for n in graph.nodes if topology.role(n) is Role.PE]
    if pes != [tree.pe]:
        raise TopologyError(f"tree {tree.id}: expected exactly one PE, found {pes}")
    if any(link.congested for link in tree.links):
        raise TopologyError(f"tree {tree.id}: contains a permanently congested link")


def home_tree(trees: Sequence[MulticastTree], pe: str) -> MulticastTree:
    """The candidate a PE uses on its own: fewest links, ties by lowest tree id."""
    mine = [t for t in trees if t.pe == pe]
    if not mine:
        raise TopologyError(f"no candidate tree for PE {pe!r}")
    return min(mine, key=lambda t: (len(t.links), t.id))


def tree_weight(tree: MulticastTree, stats: LinkStats) -> float:
    """Sum of link utilizations over the tree; congested links count as CONGESTED_WEIGHT."""
    total = 0.0
    for link in tree.links:
        total += CONGESTED_WEIGHT if link.congested else stats.utilization(link.id)
    return total


def _expand(specs: Iterable[LinkSpec]) -> List[Link]:
    links = []
    for spec in specs:
        ends = [(spec.a, spec.b), (spec.b, spec.a)] if spec.duplex else [(spec.a, spec.b)]
        for a, b in ends:
            links.append(
                Link(a, b, spec.bandwidth_bps, spec.delay_s, spec.queue_pkts, spec.congested)
            )
    return links


def fig6_spec(vni: int = 1000) -> TopologySpec:
    """Two PEs multi-homing two spines, two TORs, a route reflector and four hosts."""
    nodes = (
        ("PE-1", Role.PE),
        ("PE-2", Role.PE),
        ("CE-1", Role.SPINE),
        ("CE-2", Role.SPINE),
        ("TOR-1", Role.TOR),
        ("TOR-2", Role.TOR),
        ("RR", Role.CORE),
        ("Sink-1", Role.HOST),
        ("Source-1", Role.HOST),
        ("Source-2", Role.HOST),
        ("BUM-Source", Role.HOST),
    )
    access = dict(bandwidth_bps=10 * GBPS, delay_s=DEFAULT_DELAY_S)
    links = (
        LinkSpec("PE-1", "CE-1"),
        LinkSpec("PE-2", "CE-2"),
        LinkSpec("PE-1", "CE-2", congested=True),
        LinkSpec("PE-2", "CE-1", congested=True),
        LinkSpec("CE-1", "TOR-1"),
        LinkSpec("CE-1", "TOR-2"),
        LinkSpec("CE-2", "TOR-1"),
        LinkSpec("CE-2", "TOR-2"),
        LinkSpec("RR", "PE-1"),
        LinkSpec("RR", "PE-2"),
        LinkSpec("TOR-1", "Sink-1", **access),
        LinkSpec("TOR-2", "Source-2", **access),
        LinkSpec("Source-1", "PE-1", **access),
        LinkSpec("BUM-Source", "RR", **access),
    )
    network = LogicalNetwork(vni, frozenset({"TOR-1", "TOR-2"}), "ES-1", "EVI-1")
    return TopologySpec(preset="fig6", nodes=nodes, links=links, networks=(network,))


def line_spec(vni: int = 1000) -> TopologySpec:
    """TOR-1, CE-1 and PE-1 in a line: the smallest topology with a candidate tree."""
    nodes = (("PE-1", Role.PE), ("CE-1", Role.SPINE), ("TOR-1", Role.TOR))
    links = (LinkSpec("PE-1", "CE-1"), LinkSpec("CE-1", "TOR-1"))
    network = LogicalNetwork(vni, frozenset({"TOR-1"}), "ES-1", "EVI-1")
    return TopologySpec(preset="line", nodes=nodes, links=links, networks=(network,))


PRESETS: Dict[str, Callable[..., TopologySpec]] = {"fig6": fig6_spec, "line": line_spec}


def build_topology(spec: TopologySpec) -> Topology:
    if spec.preset is not None:
        try:
            base = PRESETS[spec.preset]()
        except KeyError as exc:
            raise TopologyError(f"unknown topology preset {spec.preset!r}") from exc
        nodes, links = base.nodes, base.links
        networks = spec.networks or base.networks
    else:
        if not spec.nodes:
            raise TopologyError("topology needs a preset or an explicit node list")
        nodes, links, networks = spec.nodes, spec.links, spec.networks
    topology = Topology(nodes, _expand(links), networks)
    logger.debug(
        "built topology: %d nodes, %d directed links, %d networks",
        len(topology.nodes),
        len(topology.links),
        len(topology.networks),
    )
    return topology
