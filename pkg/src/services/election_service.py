from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from ..engine import Engine, ForwardingStatus
from ..errors import ElectionError
from ..topology import Topology

logger = logging.getLogger(__name__)

LATE_ROUTE_POLICIES = ("timer", "immediate")


def modulo_elect(tag: int, candidates: Sequence[str]) -> str:
    """Service carving: the DF for tag is candidates[tag mod N]."""
    if not candidates:
        raise ElectionError("cannot elect a DF from an empty candidate list")
    return candidates[tag % len(candidates)]


def fairness_histogram(tags: Iterable[int], candidates: Sequence[str]) -> Dict[str, int]:
    if not candidates:
        raise ElectionError("fairness_histogram needs at least one candidate")
    counts = Counter({pe: 0 for pe in candidates})
    counts.update(modulo_elect(tag, candidates) for tag in tags)
    return dict(counts)


def df_churn(tags: Iterable[int], before: Sequence[str], after: Sequence[str]) -> List[int]:
    """Tags whose DF differs between two candidate sets."""
    return [tag for tag in tags if modulo_elect(tag, before) != modulo_elect(tag, after)]


class HandshakePhase(str, Enum):
    REQUESTED = "REQUESTED"
    GRANTED = "GRANTED"
    COMPLETE = "COMPLETE"


_PHASE_ORDER = {HandshakePhase.REQUESTED: 0, HandshakePhase.GRANTED: 1, HandshakePhase.COMPLETE: 2}


@dataclass(frozen=True)
class ElectionConfig:
    timer: float = 3.0
    jitter: float = 0.005
    inter_pe_delay: float = 0.0
    late_route: str = "timer"
    block_on_route: bool = False
    handshake: bool = False

    def __post_init__(self) -> None:
        if self.timer < 0 or self.jitter < 0 or self.inter_pe_delay < 0:
            raise ElectionError("timer, jitter and inter_pe_delay must be >= 0")
        if self.late_route not in LATE_ROUTE_POLICIES:
            raise ElectionError(f"late_route must be one of {LATE_ROUTE_POLICIES}")


@dataclass(frozen=True)
class EsRoute:
    esi: str
    origin_pe: str
    sent_at: float


@dataclass
class DfState:
    pe: str
    esi: str
    evi: str
    vnis: Tuple[int, ...]
    candidates: List[str] = field(default_factory=list)
    timer_deadline: Optional[float] = None
    elected: Dict[int, str] = field(default_factory=dict)
    forwarding: Dict[int, ForwardingStatus] = field(default_factory=dict)
    synced: bool = False
    discovered: bool = False
    expired_once: bool = False
    deferred: bool = False
    timer_generation: int = 0

    def add_candidate(self, pe: str) -> bool:
        if pe in self.candidates:
            return False
        self.candidates.append(pe)
        self.candidates.sort()
        return True

    def is_unblocked(self, vni: int) -> bool:
        return self.forwarding.get(vni) is ForwardingStatus.UNBLOCKED


@dataclass
class HandshakeSession:
    old_df: str
    new_df: str
    vni: int
    phase: HandshakePhase
    started_at: float
    completed_at: Optional[float] = None

    def advance(self, phase: HandshakePhase) -> None:
        if _PHASE_ORDER[phase] < _PHASE_ORDER[self.phase]:
            raise ElectionError(f"handshake {self.old_df}->{self.new_df}: {self.phase.value} -> {phase.value}")
        self.phase = phase


class ElectionService:
    """
    Distributed EVPN control plane of every PE: ES route exchange through the route
    reflector, per-PE election timers, service carving and the handshake DF transfer.

    Control messages travel PE -> RR -> PE with half the inter-PE delay per hop. The
    handshake messages (TAKEOVER_REQUEST / TAKEOVER_GRANT) go PE to PE in one
    inter-PE delay.
    """

    def __init__(
        self,
        engine: Engine,
        topology: Topology,
        config: ElectionConfig,
        jitter: Optional[Mapping[str, float]] = None,
    ):
        self.engine = engine
        self.topology = topology
        self.config = config
        self.jitter = dict(jitter or {})
        self.states: Dict[Tuple[str, str, str], DfState] = {}
        self.rr_routes: Dict[str, Dict[str, EsRoute]] = {}
        self.active_pes: Set[str] = set()
        self.sessions: List[HandshakeSession] = []
        self.messages_sent = 0

        segments: Dict[Tuple[str, str], List[int]] = {}
        members: Dict[Tuple[str, str], set] = {}
        for vni, net in sorted(topology.networks.items()):
            key = (net.esi, net.evi)
            segments.setdefault(key, []).append(vni)
            members.setdefault(key, set()).update(topology.network_pes(net))
        for (esi, evi), vnis in segments.items():
            for pe in sorted(members[(esi, evi)]):
                self.states[(pe, esi, evi)] = DfState(pe, esi, evi, tuple(vnis))
        self.esi_members: Dict[str, List[str]] = {}
        for (esi, _), pes in members.items():
            self.esi_members.setdefault(esi, [])
            self.esi_members[esi] = sorted(set(self.esi_members[esi]) | pes)

    @property
    def delay(self) -> float:
        return self.config.inter_pe_delay

    def state(self, pe: str, esi: str, evi: Optional[str] = None) -> DfState:
        for (p, e, v), state in self.states.items():
            if p == pe and e == esi and (evi is None or v == evi):
                return state
        raise ElectionError(f"{pe} is not attached to {esi}")

    def _states_of(self, pe: str, esi: Optional[str] = None) -> List[DfState]:
        return [s for (p, e, _), s in sorted(self.states.items()) if p == pe and (esi is None or e == esi)]

    def esis_of(self, pe: str) -> List[str]:
        return sorted({s.esi for s in self._states_of(pe)})

    def _send(self, delay: float, action, label: str) -> None:
        self.messages_sent += 1
        self.engine.schedule(self.engine.now + delay, action, label)

    def _set_forwarding(self, state: DfState, vni: int, status: ForwardingStatus, now: float, cause: str) -> None:
        state.forwarding[vni] = status
        self.engine.df_table.set(state.pe, vni, status, now, cause)

    def bootstrap(self, pes: Iterable[str], now: float = 0.0) -> None:
        """Start with the given PEs up and already converged (routes exchanged, timers expired)."""
        up = sorted(set(pes))
        for pe in up:
            for state in self._states_of(pe):
                self.active_pes.add(pe)
                state.discovered = state.synced = state.expired_once = True
                for peer in up:
                    if peer in self.esi_members.get(state.esi, ()):
                        state.add_candidate(peer)
                        self.rr_routes.setdefault(state.esi, {})[peer] = EsRoute(state.esi, peer, now)
                for vni in state.vnis:
                    winner = modulo_elect(vni, state.candidates)
                    state.elected[vni] = winner
                    status = ForwardingStatus.UNBLOCKED if winner == pe else ForwardingStatus.BLOCKED
                    self._set_forwarding(state, vni, status, now, "bootstrap")
        logger.debug("election bootstrap with %s", up)

    def on_es_discovered(self, pe: str, esi: str, now: float) -> None:
        states = self._states_of(pe, esi)
        if not states:
            raise ElectionError(f"{pe} is not attached to {esi}")
        self.active_pes.add(pe)
        for state in states:
            if not state.discovered:
                state.discovered = True
                state.synced = False
                for vni in state.vnis:
                    self._set_forwarding(state, vni, ForwardingStatus.BLOCKED, now, "boot")
            state.add_candidate(pe)
            self._arm_timer(state, now)
        route = EsRoute(esi, pe, now)
        logger.debug("t=%.6f %s advertises ES route for %s", now, pe, esi)
        self._send(self.delay / 2, lambda: self._on_rr_route(route), f"es-route {pe}->RR")

    def _on_rr_route(self, route: EsRoute) -> None:
        table = self.rr_routes.setdefault(route.esi, {})
        table[route.origin_pe] = route
        hop = self.delay / 2
        for peer in self.esi_members.get(route.esi, []):
            if peer != route.origin_pe and peer in self.active_pes:
                self._send(
                    hop,
                    lambda peer=peer: self.on_es_route_received(peer, route, self.engine.now),
                    f"es-route RR->{peer}",
                )
        for origin, stored in sorted(table.items()):
            if origin != route.origin_pe:
                self._send(
                    hop,
                    lambda stored=stored: self.on_es_route_received(route.origin_pe, stored, self.engine.now),
                    f"es-route RR->{route.origin_pe}",
                )
        self._send(hop, lambda: self._on_sync(route.origin_pe, route.esi), f"end-of-rib RR->{route.origin_pe}")

    def _on_sync(self, pe: str, esi: str) -> None:
        now = self.engine.now
        for state in self._states_of(pe, esi):
            state.synced = True
            if state.deferred:
                state.deferred = False
                self._elect(state, now)

    def on_es_route_received(self, pe: str, route: EsRoute, now: float) -> None:
        for state in self._states_of(pe, route.esi):
            if not state.add_candidate(route.origin_pe):
                continue
            logger.debug("t=%.6f %s learned %s, candidates %s", now, pe, route.origin_pe, state.candidates)
            if self.config.block_on_route or self.config.handshake:
                self._release_lost_tags(state, now)
            if state.timer_deadline is None:
                if state.expired_once and self.config.late_route == "immediate":
                    self._elect(state, now)
                else:
                    self._arm_timer(state, now)

    def _release_lost_tags(self, state: DfState, now: float) -> None:
        for vni in state.vnis:
            winner = modulo_elect(vni, state.candidates)
            if winner == state.pe or not state.is_unblocked(vni):
                continue
            state.elected[vni] = winner
            self._set_forwarding(state, vni, ForwardingStatus.BLOCKED, now, "route")
            if self.config.handshake:
                self._grant(state.pe, winner, vni, now)

    def _arm_timer(self, state: DfState, now: float) -> None:
        state.timer_generation += 1
        generation = state.timer_generation
        deadline = now + self.config.timer + self.jitter.get(state.pe, 0.0)
        state.timer_deadline = deadline

        def fire() -> None:
            if state.timer_generation == generation:
                self._expire(state, self.engine.now)

        self.engine.schedule(deadline, fire, f"df-timer {state.pe}")

    def on_timer_expired(self, pe: str, esi: str, now: float) -> None:
        for state in self._states_of(pe, esi):
            state.timer_generation += 1
            self._expire(state, now)

    def _expire(self, state: DfState, now: float) -> None:
        state.timer_deadline = None
        state.expired_once = True
        if self.config.handshake and not state.synced:
            state.deferred = True
            return
        self._elect(state, now)

    def _elect(self, state: DfState, now: float) -> None:
        for vni in state.vnis:
            winner = modulo_elect(vni, state.candidates)
            state.elected[vni] = winner
            if not self.config.handshake:
                status = ForwardingStatus.UNBLOCKED if winner == state.pe else ForwardingStatus.BLOCKED
                self._set_forwarding(state, vni, status, now, "election")
            elif winner != state.pe:
                if state.is_unblocked(vni):
                    self._set_forwarding(state, vni, ForwardingStatus.BLOCKED, now, "election")
                    self._grant(state.pe, winner, vni, now)
                elif vni not in state.forwarding:
                    self._set_forwarding(state, vni, ForwardingStatus.BLOCKED, now, "election")
            elif not state.is_unblocked(vni):
                others = [pe for pe in state.candidates if pe != state.pe]
                if others:
                    self.handshake_transfer(modulo_elect(vni, others), state.pe, vni, now)
                else:
                    self._set_forwarding(state, vni, ForwardingStatus.UNBLOCKED, now, "election")

    def handshake_transfer(self, old_df: str, new_df: str, vni: int, now: float) -> Optional[HandshakeSession]:
        """new_df asks old_df to stop forwarding vni; new_df unblocks only once the grant arrives."""
        if old_df == new_df:
            return None
        session = HandshakeSession(old_df, new_df, vni, HandshakePhase.REQUESTED, now)
        self.sessions.append(session)
        logger.debug("t=%.6f %s -> %s TAKEOVER_REQUEST vni %s", now, new_df, old_df, vni)
        self._send(self.delay, lambda: self._on_takeover_request(session), f"takeover-request {new_df}->{old_df}")
        return session

    def _on_takeover_request(self, session: HandshakeSession) -> None:
        now = self.engine.now
        for state in self._states_of(session.old_df):
            if session.vni in state.vnis and state.is_unblocked(session.vni):
                self._set_forwarding(state, session.vni, ForwardingStatus.BLOCKED, now, "handshake")
        self._grant(session.old_df, session.new_df, session.vni, now, session=session)

    def _grant(
        self,
        old_df: str,
        new_df: str,
        vni: int,
        now: float,
        session: Optional[HandshakeSession] = None,
    ) -> None:
        if session is None:
            session = HandshakeSession(old_df, new_df, vni, HandshakePhase.GRANTED, now)
            self.sessions.append(session)
        session.advance(HandshakePhase.GRANTED)
        logger.debug("t=%.6f %s -> %s TAKEOVER_GRANT vni %s", now, old_df, new_df, vni)
        self._send(self.delay, lambda: self._on_takeover_grant(session), f"takeover-grant {old_df}->{new_df}")

    def _on_takeover_grant(self, session: HandshakeSession) -> None:
        now = self.engine.now
        for state in self._states_of(session.new_df):
            if session.vni not in state.vnis or not state.candidates:
                continue
            if modulo_elect(session.vni, state.candidates) == state.pe and not state.is_unblocked(session.vni):
                state.elected[session.vni] = state.pe
                self._set_forwarding(state, session.vni, ForwardingStatus.UNBLOCKED, now, "handshake")
        session.advance(HandshakePhase.COMPLETE)
        session.completed_at = now
