"""
Traffic programs and sink-side accounting.

Streams are constant-rate or stepped-ramp packet sources running as simpy processes.
`StreamLedger` follows every copy of every sequence number through the fabric so that,
at any instant, each offered packet is exactly one of delivered, in flight, dropped or
blocked at a PE.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from .engine import DEFAULT_PKT_SIZE, Engine, Packet, PacketKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ramp:
    step_bps: float
    step_duration: float
    max_bps: float
    initial_bps: float = 0.0

    def __post_init__(self) -> None:
        if self.step_bps <= 0 or self.step_duration <= 0:
            raise ValueError("ramp step_bps and step_duration must be > 0")
        if not 0 <= self.initial_bps <= self.max_bps:
            raise ValueError("ramp needs 0 <= initial_bps <= max_bps")

    def plateaus(self, start: float, stop: float) -> List[Tuple[float, float, float]]:
        """(begin, end, rate) steps; the plateau at max_bps lasts until stop."""
        steps = []
        t, rate = start, self.initial_bps
        while t < stop:
            end = stop if rate >= self.max_bps else min(t + self.step_duration, stop)
            steps.append((t, end, rate))
            t, rate = end, min(rate + self.step_bps, self.max_bps)
        return steps


@dataclass(frozen=True)
class StreamSpec:
    name: str
    kind: PacketKind
    src: str
    dst: str
    start: float
    stop: float
    rate_bps: float = 0.0
    pkt_size: int = DEFAULT_PKT_SIZE
    ramp: Optional[Ramp] = None
    vni: Optional[int] = None
    # Per-packet emission offset, uniform in [0, jitter * gap); 0 keeps a constant bit rate.
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is PacketKind.CONTROL:
            raise ValueError(f"stream {self.name}: CONTROL is not a traffic kind")
        if not self.start < self.stop:
            raise ValueError(f"stream {self.name}: start must be < stop")
        if self.rate_bps < 0:
            raise ValueError(f"stream {self.name}: rate_bps must be >= 0")
        if self.pkt_size <= 0:
            raise ValueError(f"stream {self.name}: pkt_size must be > 0")
        if self.kind is PacketKind.BUM and self.vni is None:
            raise ValueError(f"stream {self.name}: BUM streams need a vni")
        if not 0 <= self.jitter < 1:
            raise ValueError(f"stream {self.name}: jitter must be in [0, 1)")

    def plateaus(self) -> List[Tuple[float, float, float]]:
        if self.ramp is not None:
            return self.ramp.plateaus(self.start, self.stop)
        return [(self.start, self.stop, self.rate_bps)]

    def gap(self, rate_bps: float) -> float:
        return self.pkt_size * 8 / rate_bps

    def emission_times(self, rng: Optional[np.random.Generator] = None) -> Iterator[float]:
        """Slot instants begin + k * gap of every plateau, each shifted by its jitter draw when rng is given."""
        jittered = rng is not None and self.jitter > 0
        for begin, end, rate in self.plateaus():
            if rate <= 0:
                continue
            gap = self.gap(rate)
            k = 0
            while begin + k * gap < end:
                offset = float(rng.uniform(0.0, self.jitter * gap)) if jittered else 0.0
                yield begin + k * gap + offset
                k += 1

    def expected_offered(self) -> int:
        return sum(
            math.floor((end - begin) * rate / (8 * self.pkt_size)) for begin, end, rate in self.plateaus()
        )


@dataclass(frozen=True)
class SinkAccount:
    stream: str
    offered: int = 0
    received_total: int = 0
    received_unique: int = 0
    in_flight: int = 0
    dropped: int = 0
    blocked: int = 0

    @property
    def duplicates(self) -> int:
        return self.received_total - self.received_unique

    @property
    def lost(self) -> int:
        return self.offered - self.received_unique - self.in_flight - self.blocked

    @property
    def missing(self) -> int:
        """Offered packets the sink never saw and that are no longer in flight."""
        return self.offered - self.received_unique - self.in_flight

    @property
    def loss_pct(self) -> float:
        return 100.0 * self.missing / self.offered if self.offered else 0.0


@dataclass
class _StreamState:
    spec: Optional[StreamSpec]
    offered: int = 0
    received_total: int = 0
    received_unique: int = 0
    dropped: int = 0
    blocked: int = 0
    seen: Set[int] = field(default_factory=set)
    live: Dict[int, int] = field(default_factory=dict)
    fate: Dict[int, str] = field(default_factory=dict)
    first_delivery: Dict[int, float] = field(default_factory=dict)
    duplicate_times: List[float] = field(default_factory=list)
    emitted_at: Dict[int, float] = field(default_factory=dict)
    # (tree id, stamped path) of every BUM copy that reached the sink.
    paths: List[Tuple[Optional[str], Tuple[str, ...]]] = field(default_factory=list)


class StreamLedger:
    """Copy-level packet bookkeeping for every stream of one run."""

    def __init__(self) -> None:
        self._streams: Dict[str, _StreamState] = {}

    def register(self, spec: StreamSpec) -> None:
        self._streams.setdefault(spec.name, _StreamState(spec))

    def _state(self, packet: Packet) -> _StreamState:
        state = self._streams.get(packet.stream)
        if state is None:
            state = self._streams[packet.stream] = _StreamState(None)
        return state

    def offered(self, packet: Packet, now: Optional[float] = None) -> None:
        state = self._state(packet)
        state.offered += 1
        if now is not None:
            state.emitted_at[packet.seq] = now
        state.live[packet.seq] = 1

    def fanout(self, packet: Packet, copies: int) -> None:
        self._state(packet).live[packet.seq] += copies - 1

    def dropped(self, packet: Packet) -> None:
        self._end_copy(packet, "dropped")

    def blocked(self, packet: Packet) -> None:
        self._end_copy(packet, "blocked")

    def consumed(self, packet: Packet) -> None:
        self._end_copy(packet, None)

    def record_delivery(self, sink: str, packet: Packet, now: float) -> None:
        state = self._state(packet)
        if state.spec is not None and sink != state.spec.dst:
            self.consumed(packet)
            return
        state.received_total += 1
        if packet.kind is PacketKind.BUM:
            state.paths.append((packet.tree_id, tuple(packet.stamp_path)))
        if packet.seq in state.seen:
            state.duplicate_times.append(now)
        else:
            state.seen.add(packet.seq)
            state.received_unique += 1
            state.first_delivery[packet.seq] = now
        self._end_copy(packet, None)

    def _end_copy(self, packet: Packet, fate: Optional[str]) -> None:
        state = self._state(packet)
        seq = packet.seq
        if fate == "dropped" or (fate == "blocked" and state.fate.get(seq) != "dropped"):
            state.fate[seq] = fate
        remaining = state.live[seq] - 1
        if remaining:
            state.live[seq] = remaining
            return
        del state.live[seq]
        final = state.fate.pop(seq, "dropped")
        if seq in state.seen:
            return
        if final == "blocked":
            state.blocked += 1
        else:
            state.dropped += 1

    def account(self, name: str) -> SinkAccount:
        state = self._streams.get(name)
        if state is None:
            return SinkAccount(name)
        in_flight = sum(1 for seq in state.live if seq not in state.seen)
        return SinkAccount(
            stream=name,
            offered=state.offered,
            received_total=state.received_total,
            received_unique=state.received_unique,
            in_flight=in_flight,
            dropped=state.dropped,
            blocked=state.blocked,
        )

    def accounts(self) -> Dict[str, SinkAccount]:
        return {name: self.account(name) for name in sorted(self._streams)}

    def duplicate_times(self, name: str) -> List[float]:
        state = self._streams.get(name)
        return list(state.duplicate_times) if state else []

    def delivered_paths(self, name: str) -> List[Tuple[Optional[str], Tuple[str, ...]]]:
        state = self._streams.get(name)
        return list(state.paths) if state else []

    def window_loss(self, name: str, begin: float, end: float) -> Tuple[int, int]:
        """(offered, never delivered) for the packets emitted in [begin, end)."""
        state = self._streams.get(name)
        if state is None:
            return 0, 0
        emitted = [seq for seq, t in state.emitted_at.items() if begin <= t < end]
        return len(emitted), sum(1 for seq in emitted if seq not in state.seen)

    def delivered_seqs(self, name: str) -> List[int]:
        """Sequence numbers in first-delivery order."""
        state = self._streams.get(name)
        if state is None:
            return []
        return [seq for seq, _ in sorted(state.first_delivery.items(), key=lambda item: (item[1], item[0]))]


class TrafficSource:
    """Emits one stream's packets into the fabric at its scheduled instants."""

    def __init__(
        self,
        spec: StreamSpec,
        engine: Engine,
        ledger: StreamLedger,
        inject: Callable[[Packet], None],
        rng: Optional[np.random.Generator] = None,
    ):
        self.spec = spec
        self.rng = rng
        self.engine = engine
        self.ledger = ledger
        self.inject = inject
        self.next_seq = 0
        ledger.register(spec)

    def start(self) -> None:
        self.engine.process(self._run())

    def _run(self):
        env = self.engine.env
        for t in self.spec.emission_times(self.rng):
            if t > env.now:
                yield env.timeout(t - env.now)
            self.emit(env.now)

    def emit(self, now: float) -> Packet:
        spec = self.spec
        packet = Packet(
            kind=spec.kind,
            stream=spec.name,
            seq=self.next_seq,
            size=spec.pkt_size,
            src=spec.src,
            dst=spec.dst,
            vni=spec.vni,
        )
        self.next_seq += 1
        self.ledger.offered(packet, now)
        self.inject(packet)
        return packet
