from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from ..engine import Engine, Fabric, ForwardingStatus
from ..errors import ControllerError, TopologyError
from ..topology import LinkStats, MulticastTree, Topology, home_tree, tree_weight

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerConfig:
    poll_interval: float = 5.0
    congestion_threshold: float = 0.95
    hold_polls: int = 2
    oob_delay: float = 0.001
    # Old-tree rules stay installed this long after the new DF is unblocked.
    rule_grace: float = 0.01

    def __post_init__(self) -> None:
        if self.poll_interval <= 0:
            raise ControllerError("poll_interval must be > 0")
        if not 0 < self.congestion_threshold <= 1:
            raise ControllerError("congestion_threshold must be in (0, 1]")
        if self.hold_polls < 1:
            raise ControllerError("hold_polls must be >= 1")
        if self.oob_delay < 0 or self.rule_grace < 0:
            raise ControllerError("oob_delay and rule_grace must be >= 0")


class DfAction(str, Enum):
    BLOCK = "BLOCK"
    UNBLOCK = "UNBLOCK"


class Verdict(str, Enum):
    KEEP = "KEEP"
    SWITCH = "SWITCH"


@dataclass(frozen=True)
class DfCommand:
    target_pe: str
    vni: int
    action: DfAction
    issued_at: float


@dataclass
class TreeDecisionState:
    active_tree: str
    violation_streak: int = 0
    last_weights: Dict[str, float] = field(default_factory=dict)
    pinned: bool = False


@dataclass(frozen=True)
class TreeDecision:
    time: float
    vni: int
    verdict: Verdict
    active_tree: str
    new_tree: Optional[str]
    streak: int
    max_utilization: float
    weights: Mapping[str, float]


class SdnController:
    """
    Centralized DF selection: polls link counters, keeps one active multicast tree per
    vni and moves BUM forwarding to the PE of a lighter tree once the active tree stays
    congested. Commands reach PEs and switches over an out-of-band channel with a fixed
    delay that data-plane load never affects.
    """

    def __init__(
        self,
        engine: Engine,
        fabric: Fabric,
        topology: Topology,
        config: ControllerConfig,
        candidates: Mapping[int, Sequence[MulticastTree]],
    ):
        self.engine = engine
        self.fabric = fabric
        self.topology = topology
        self.config = config
        self.candidates: Dict[int, List[MulticastTree]] = {vni: list(trees) for vni, trees in candidates.items()}
        self.trees: Dict[str, MulticastTree] = {t.id: t for trees in self.candidates.values() for t in trees}
        self.state: Dict[int, TreeDecisionState] = {}
        self.commands: List[DfCommand] = []
        self.decisions: List[TreeDecision] = []

    def start(self, initial_df: Mapping[int, str], now: float = 0.0) -> None:
        """Install the initial DF's home tree for each vni and subscribe to counter polls."""
        for vni, pe in sorted(initial_df.items()):
            tree = home_tree(self._candidates(vni), pe)
            self.state[vni] = TreeDecisionState(active_tree=tree.id)
            self.fabric.install_rules(tree)
            self.fabric.set_egress(pe, vni, tree)
            for other in self.topology.network_pes(self.topology.network(vni)):
                status = ForwardingStatus.UNBLOCKED if other == pe else ForwardingStatus.BLOCKED
                self.engine.df_table.set(other, vni, status, now, "bootstrap")
            logger.debug("vni %s starts on tree %s", vni, tree.id)
        self.engine.add_poll_listener(self.poll_tick)

    def _candidates(self, vni: int) -> List[MulticastTree]:
        try:
            return self.candidates[vni]
        except KeyError as exc:
            raise ControllerError(f"vni {vni} is not managed by the controller") from exc

    def active_tree(self, vni: int) -> MulticastTree:
        return self.trees[self.state[vni].active_tree]

    def current_df(self, vni: int) -> str:
        return self.active_tree(vni).pe

    def poll_tick(self, now: float, stats: LinkStats) -> List[TreeDecision]:
        decisions = []
        for vni, state in sorted(self.state.items()):
            trees = self._candidates(vni)
            weights = {tree.id: tree_weight(tree, stats) for tree in trees}
            state.last_weights = weights
            active = self.trees[state.active_tree]
            best = min(trees, key=lambda t: (weights[t.id], t.id != active.id, t.id))
            max_util = stats.max_utilization(active.links)
            breach = weights[active.id] > weights[best.id] and max_util > self.config.congestion_threshold

            state.violation_streak = state.violation_streak + 1 if breach and not state.pinned else 0
            verdict, new_tree = Verdict.KEEP, None
            if state.violation_streak >= self.config.hold_polls:
                verdict, new_tree = Verdict.SWITCH, best.id
            decision = TreeDecision(now, vni, verdict, active.id, new_tree, state.violation_streak, max_util, weights)
            decisions.append(decision)
            self.decisions.append(decision)
            if verdict is Verdict.SWITCH:
                logger.info(
                    "t=%.3f vni %s: tree %s (w=%.3f, max util %.3f) -> %s (w=%.3f)",
                    now,
                    vni,
                    active.id,
                    weights[active.id],
                    max_util,
                    best.id,
                    weights[best.id],
                )
                state.violation_streak = 0
                self.apply_tree_switch(active, best, vni, now)
        return decisions

    def apply_tree_switch(self, old_tree: MulticastTree, new_tree: MulticastTree, vni: int, now: float) -> None:
        """Rules for new_tree, then BLOCK the old PE and UNBLOCK the new one once the block landed."""
        if old_tree.id == new_tree.id:
            raise ControllerError(f"vni {vni}: tree {new_tree.id} is already active")
        oob = self.config.oob_delay
        self.state[vni].active_tree = new_tree.id
        self.engine.schedule(now + oob, lambda: self.fabric.install_rules(new_tree), f"install {new_tree.id}")

        def retire(at: float) -> None:
            self.engine.schedule(
                at + self.config.rule_grace,
                lambda: self.fabric.retire_rules(old_tree),
                f"retire {old_tree.id}",
            )

        if old_tree.pe == new_tree.pe:

            def move_egress() -> None:
                self.fabric.set_egress(new_tree.pe, vni, new_tree)
                retire(self.engine.now)

            self.engine.schedule(now + oob, move_egress, f"egress {new_tree.pe}")
            return

        def unblock_new(at: float) -> None:
            self._command(new_tree.pe, vni, DfAction.UNBLOCK, at, new_tree, retire)

        self._command(old_tree.pe, vni, DfAction.BLOCK, now, None, unblock_new)

    def _command(
        self,
        pe: str,
        vni: int,
        action: DfAction,
        now: float,
        tree: Optional[MulticastTree],
        on_delivered: Optional[Callable[[float], None]] = None,
    ) -> DfCommand:
        command = DfCommand(pe, vni, action, now)
        self.commands.append(command)

        def deliver() -> None:
            at = self.engine.now
            if tree is not None:
                self.fabric.set_egress(pe, vni, tree)
            status = ForwardingStatus.UNBLOCKED if action is DfAction.UNBLOCK else ForwardingStatus.BLOCKED
            self.engine.df_table.set(pe, vni, status, at, "controller")
            if on_delivered is not None:
                on_delivered(at)

        self.engine.schedule(now + self.config.oob_delay, deliver, f"{action.value} {pe}")
        return command

    def set_df_deterministic(self, evi: str, vni: int, pe: str) -> None:
        """Administrator override: make pe the DF for vni and stop dynamic switching for it."""
        try:
            net = self.topology.network(vni)
        except TopologyError as exc:
            raise ControllerError(str(exc)) from exc
        if net.evi != evi:
            raise ControllerError(f"vni {vni} does not belong to {evi}")
        if pe not in self.topology.network_pes(net):
            raise ControllerError(f"{pe} does not participate in {evi}")
        if vni not in self.state:
            raise ControllerError(f"vni {vni} is not managed by the controller")
        self.state[vni].pinned = True
        self.state[vni].violation_streak = 0
        if self.current_df(vni) == pe:
            return
        old = self.active_tree(vni)
        new = home_tree(self._candidates(vni), pe)
        logger.info("t=%.6f vni %s: DF set to %s by command", self.engine.now, vni, pe)
        self.apply_tree_switch(old, new, vni, self.engine.now)

    def resume_dynamic(self, vni: int) -> None:
        state = self.state.get(vni)
        if state is None:
            raise ControllerError(f"vni {vni} is not managed by the controller")
        state.pinned = False
        state.violation_streak = 0

    def switch_decisions(self, vni: Optional[int] = None) -> List[TreeDecision]:
        return [d for d in self.decisions if d.verdict is Verdict.SWITCH and (vni is None or d.vni == vni)]
