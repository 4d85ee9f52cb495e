from __future__ import annotations

import pytest

from src.checks import exclusivity_violations
from src.engine import Engine, Fabric
from src.errors import ControllerError
from src.services.controller_service import ControllerConfig, DfAction, SdnController, Verdict
from src.topology import LinkStats, enumerate_trees
from src.traffic import StreamLedger

VNI = 1001


def _controller(topology, **config):
    engine = Engine(topology, StreamLedger())
    fabric = Fabric(engine, topology)
    candidates = {VNI: enumerate_trees(topology, topology.network(VNI))}
    controller = SdnController(engine, fabric, topology, ControllerConfig(**config), candidates)
    controller.start({VNI: "PE-1"})
    return engine, fabric, controller


def _stats(topology, utilization=None) -> LinkStats:
    bandwidth = {link.id: link.bandwidth for link in topology.links.values()}
    values = {lid: 0.0 for lid in bandwidth}
    values.update(utilization or {})
    return LinkStats.from_utilization(values, bandwidth, interval=5.0)


def test_start_installs_home_tree(fig6):
    engine, fabric, controller = _controller(fig6)
    assert controller.active_tree(VNI).id == "1001:CE-1/PE-1"
    assert engine.df_table.unblocked(VNI) == ["PE-1"]
    assert fabric.pe_egress[("PE-1", VNI)] == "1001:CE-1/PE-1"
    assert fabric.has_rule("CE-1", "1001:CE-1/PE-1")


def test_switch_after_hold_polls(fig6):
    engine, fabric, controller = _controller(fig6)
    # Every other tree crosses a loaded CE-1 link, so CE-2/PE-2 is strictly lightest.
    hot = _stats(fig6, {"CE-1->TOR-1": 0.97, "CE-1->TOR-2": 0.05})
    first = controller.poll_tick(0.0, hot)[0]
    assert (first.verdict, first.streak) == (Verdict.KEEP, 1)
    second = controller.poll_tick(0.0, hot)[0]
    assert second.verdict is Verdict.SWITCH
    assert second.new_tree == "1001:CE-2/PE-2"
    assert second.max_utilization == pytest.approx(0.97)
    assert controller.current_df(VNI) == "PE-2"

    engine.run_until(0.1)
    assert [(c.target_pe, c.action) for c in controller.commands] == [
        ("PE-1", DfAction.BLOCK),
        ("PE-2", DfAction.UNBLOCK),
    ]
    assert engine.df_table.df_changes(VNI) == [(pytest.approx(0.002), "PE-1", "PE-2")]
    assert exclusivity_violations(engine.df_table.log, VNI) == []
    assert fabric.has_rule("CE-2", "1001:CE-2/PE-2")
    assert not fabric.has_rule("CE-1", "1001:CE-1/PE-1")


def test_utilization_below_threshold_keeps_tree(fig6):
    _, _, controller = _controller(fig6)
    for _ in range(5):
        decision = controller.poll_tick(0.0, _stats(fig6, {"CE-1->TOR-1": 0.9}))[0]
        assert (decision.verdict, decision.streak) == (Verdict.KEEP, 0)


def test_lightest_active_tree_is_kept(fig6):
    _, _, controller = _controller(fig6, hold_polls=1)
    decision = controller.poll_tick(0.0, _stats(fig6, {"CE-2->TOR-1": 0.99}))[0]
    assert decision.verdict is Verdict.KEEP
    assert decision.max_utilization == 0.0


def test_interrupted_breach_resets_streak(fig6):
    _, _, controller = _controller(fig6)
    streaks = [
        controller.poll_tick(0.0, _stats(fig6, {"CE-1->TOR-1": u}))[0].streak for u in (0.97, 0.5, 0.97)
    ]
    assert streaks == [1, 0, 1]
    assert controller.switch_decisions() == []


def test_single_poll_hold(fig6):
    _, _, controller = _controller(fig6, hold_polls=1)
    decision = controller.poll_tick(0.0, _stats(fig6, {"CE-1->TOR-1": 0.97}))[0]
    assert decision.verdict is Verdict.SWITCH


def test_deterministic_df_pins_until_resumed(fig6):
    engine, _, controller = _controller(fig6)
    controller.set_df_deterministic("EVI-1", VNI, "PE-2")
    engine.run_until(0.1)
    assert engine.df_table.unblocked(VNI) == ["PE-2"]

    hot = _stats(fig6, {"CE-2->TOR-1": 0.99})
    assert [controller.poll_tick(0.1, hot)[0].verdict for _ in range(3)] == [Verdict.KEEP] * 3
    controller.resume_dynamic(VNI)
    verdicts = [controller.poll_tick(0.1, hot)[0].verdict for _ in range(2)]
    assert verdicts == [Verdict.KEEP, Verdict.SWITCH]
    assert controller.current_df(VNI) == "PE-1"


def test_deterministic_df_to_current_df_is_noop(fig6):
    _, _, controller = _controller(fig6)
    controller.set_df_deterministic("EVI-1", VNI, "PE-1")
    assert controller.commands == []
    assert controller.state[VNI].pinned


def test_deterministic_df_rejects_unknown_targets(fig6):
    _, _, controller = _controller(fig6)
    with pytest.raises(ControllerError):
        controller.set_df_deterministic("EVI-1", 4242, "PE-2")
    with pytest.raises(ControllerError):
        controller.set_df_deterministic("EVI-9", VNI, "PE-2")
    with pytest.raises(ControllerError):
        controller.set_df_deterministic("EVI-1", VNI, "CE-1")
    with pytest.raises(ControllerError):
        controller.resume_dynamic(4242)


def test_same_pe_switch_moves_egress_without_commands(fig6):
    engine, fabric, controller = _controller(fig6)
    old = controller.trees["1001:CE-1/PE-1"]
    new = controller.trees["1001:CE-2/PE-1"]
    controller.apply_tree_switch(old, new, VNI, 0.0)
    engine.run_until(0.1)
    assert controller.commands == []
    assert fabric.pe_egress[("PE-1", VNI)] == new.id
    assert engine.df_table.df_changes(VNI) == []
    with pytest.raises(ControllerError):
        controller.apply_tree_switch(new, new, VNI, 0.1)


def test_config_validation():
    with pytest.raises(ControllerError):
        ControllerConfig(poll_interval=0)
    with pytest.raises(ControllerError):
        ControllerConfig(congestion_threshold=1.5)
    with pytest.raises(ControllerError):
        ControllerConfig(hold_polls=0)
