"""Topology validation, routing and candidate tree enumeration on the two-PE fabric."""

from __future__ import annotations

import pytest

from src.errors import TopologyError
from src.topology import (
    CONGESTED_WEIGHT,
    Link,
    LinkStats,
    LogicalNetwork,
    MulticastTree,
    Role,
    Topology,
    TopologySpec,
    build_topology,
    enumerate_trees,
    home_tree,
    tree_weight,
    validate_tree,
)


def _pair(a: str, b: str, **kwargs) -> list:
    return [Link(a, b, 1e9, 0.001, **kwargs), Link(b, a, 1e9, 0.001, **kwargs)]


def test_roles_and_ordinals(fig6):
    assert fig6.pes == ["PE-1", "PE-2"]
    assert fig6.spines == ["CE-1", "CE-2"]
    assert fig6.tors == ["TOR-1", "TOR-2"]
    assert fig6.nodes["PE-2"].ordinal == 1
    assert fig6.role("RR") is Role.CORE


def test_duplicate_node_rejected():
    with pytest.raises(TopologyError, match="duplicate node"):
        Topology([("A", Role.PE), ("A", Role.SPINE)], [])


def test_dangling_endpoint_rejected():
    with pytest.raises(TopologyError, match="dangling"):
        Topology([("A", Role.PE)], _pair("A", "B"))


def test_missing_reverse_link_rejected():
    with pytest.raises(TopologyError, match="no reverse"):
        Topology([("A", Role.PE), ("B", Role.SPINE)], [Link("A", "B", 1e9, 0.001)])


def test_invalid_link_parameters():
    with pytest.raises(TopologyError):
        Link("A", "B", 0, 0.001)
    with pytest.raises(TopologyError):
        Link("A", "B", 1e9, -1)


def test_network_must_name_tors():
    with pytest.raises(TopologyError, match="not a TOR"):
        Topology(
            [("P", Role.PE), ("S", Role.SPINE)],
            _pair("P", "S"),
            [LogicalNetwork(10, frozenset({"S"}), "ES-1", "EVI-1")],
        )


def test_route_avoids_congested_links_and_hosts(fig6):
    assert fig6.route("Source-1", "Sink-1") == ("Source-1", "PE-1", "CE-1", "TOR-1", "Sink-1")
    # Both spines reach TOR-1 in two hops; the lower link id wins.
    assert fig6.route("Source-2", "Sink-1") == ("Source-2", "TOR-2", "CE-1", "TOR-1", "Sink-1")
    assert fig6.route("BUM-Source", "PE-2") == ("BUM-Source", "RR", "PE-2")


def test_unknown_lookups(fig6):
    with pytest.raises(TopologyError):
        fig6.link("PE-1", "TOR-1")
    with pytest.raises(TopologyError):
        fig6.network(42)
    with pytest.raises(TopologyError):
        fig6.role("nope")


def test_fig6_has_four_candidate_trees(fig6):
    trees = enumerate_trees(fig6, fig6.network(1001))
    assert [t.id for t in trees] == [
        "1001:CE-1/PE-1",
        "1001:CE-1/PE-2",
        "1001:CE-2/PE-1",
        "1001:CE-2/PE-2",
    ]
    for tree in trees:
        validate_tree(tree, fig6)
        assert {"TOR-1", "TOR-2", tree.rp, tree.pe} <= tree.nodes
        assert not any(link.congested for link in tree.links)


def test_tree_links_point_away_from_pe(fig6):
    tree = home_tree(enumerate_trees(fig6, fig6.network(1001)), "PE-1")
    assert tree.id == "1001:CE-1/PE-1"
    assert tree.links[0].a == "PE-1"
    assert tree.link_ids() == ["PE-1->CE-1", "CE-1->TOR-1", "CE-1->TOR-2"]


def test_cross_tree_goes_through_other_spine(fig6):
    trees = {t.id: t for t in enumerate_trees(fig6, fig6.network(1001))}
    cross = trees["1001:CE-1/PE-2"]
    assert len(cross.links) == 4
    assert "CE-2" in cross.nodes
    assert home_tree(list(trees.values()), "PE-2").id == "1001:CE-2/PE-2"


def test_removing_a_spine_leaves_two_trees(fig6):
    assert len(enumerate_trees(fig6, fig6.network(1001), rps=["CE-2"])) == 2
    smaller = fig6.without(["CE-1"])
    trees = enumerate_trees(smaller, smaller.network(1001))
    assert [t.pe for t in trees] == ["PE-2"]


def test_no_tree_when_tors_unreachable():
    topo = Topology(
        [("P", Role.PE), ("S", Role.SPINE), ("T", Role.TOR)],
        _pair("P", "S") + _pair("S", "T", congested=True),
        [LogicalNetwork(10, frozenset({"T"}), "ES-1", "EVI-1")],
    )
    with pytest.raises(TopologyError, match="no candidate"):
        enumerate_trees(topo, topo.network(10))


def test_line_topology_tree(line):
    trees = enumerate_trees(line, line.network(1000))
    assert len(trees) == 1
    assert trees[0].link_ids() == ["PE-1->CE-1", "CE-1->TOR-1"]


def test_tree_weight_sums_utilization(fig6):
    tree = home_tree(enumerate_trees(fig6, fig6.network(1001)), "PE-1")
    bandwidth = {lid: 1e9 for lid in tree.link_ids()}
    stats = LinkStats.from_utilization(
        {"PE-1->CE-1": 0.1, "CE-1->TOR-1": 0.9, "CE-1->TOR-2": 0.2}, bandwidth, interval=5.0
    )
    assert tree_weight(tree, stats) == pytest.approx(1.2)
    assert stats.max_utilization(tree.links) == pytest.approx(0.9)


def test_congested_link_weight():
    tree = MulticastTree(
        id="10:S/P",
        rp="S",
        pe="P",
        vni=10,
        links=(Link("P", "S", 1e9, 0.001, congested=True),),
        leaves=frozenset(),
    )
    stats = LinkStats.from_utilization({}, {})
    assert tree_weight(tree, stats) == CONGESTED_WEIGHT
    assert stats.max_utilization(tree.links) == 0.0


def test_missing_counter_raises():
    stats = LinkStats.from_utilization({}, {})
    with pytest.raises(TopologyError):
        stats.utilization("A->B")


def test_unknown_preset():
    with pytest.raises(TopologyError, match="unknown topology preset"):
        build_topology(TopologySpec(preset="mesh"))
