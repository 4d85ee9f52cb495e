"""
Scenario configuration: the dataclasses describing one experiment, a TOML loader for
scenario files and the two built-in experiment presets.
"""

from __future__ import annotations

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .engine import DEFAULT_PKT_SIZE, PacketKind
from .errors import ControllerError, ElectionError, ScenarioError, TopologyError
from .services.controller_service import ControllerConfig
from .services.election_service import LATE_ROUTE_POLICIES, ElectionConfig
from .topology import (
    DEFAULT_DELAY_S,
    DEFAULT_QUEUE_PKTS,
    GBPS,
    LinkSpec,
    LogicalNetwork,
    Role,
    Topology,
    TopologySpec,
    build_topology,
)
from .traffic import Ramp, StreamSpec

logger = logging.getLogger(__name__)

MBPS = 1e6


class Algorithm(str, Enum):
    SERVICE_CARVING = "service_carving"
    HANDSHAKE = "handshake"
    SDN = "sdn"


class EventKind(str, Enum):
    INSERT_PE = "insert_pe"
    SET_DF = "set_df"
    RESUME_DYNAMIC = "resume_dynamic"


@dataclass(frozen=True)
class ScenarioEvent:
    at: float
    kind: EventKind
    pe: Optional[str] = None
    vni: Optional[int] = None


@dataclass(frozen=True)
class ElectionSection:
    timer: float = 3.0
    jitter: float = 0.005
    inter_pe_delays: Tuple[float, ...] = (0.0,)
    late_route: str = "timer"
    block_on_route: bool = False

    def config_for(self, delay: float, algorithm: Algorithm) -> ElectionConfig:
        return ElectionConfig(
            timer=self.timer,
            jitter=self.jitter,
            inter_pe_delay=delay,
            late_route=self.late_route,
            block_on_route=self.block_on_route,
            handshake=algorithm is Algorithm.HANDSHAKE,
        )


@dataclass(frozen=True)
class TrafficSection:
    streams: Tuple[StreamSpec, ...] = ()
    # Sweep over the measured BUM stream's rate; empty keeps the stream's own rate.
    bum_rates: Tuple[float, ...] = ()
    measured_stream: Optional[str] = None
    # Directed link id (e.g. "CE-1->TOR-1") whose polled utilization is paired with per-poll BUM loss.
    watch_link: Optional[str] = None

    def measured(self) -> Optional[StreamSpec]:
        for stream in self.streams:
            if self.measured_stream is not None:
                if stream.name == self.measured_stream:
                    return stream
            elif stream.kind is PacketKind.BUM:
                return stream
        return None

    def rate_points(self) -> Tuple[float, ...]:
        if self.bum_rates:
            return self.bum_rates
        stream = self.measured()
        return (stream.rate_bps if stream is not None else 0.0,)

    def with_bum_rate(self, rate_bps: float) -> Tuple[StreamSpec, ...]:
        measured = self.measured()
        if measured is None:
            return self.streams
        return tuple(replace(s, rate_bps=rate_bps) if s is measured else s for s in self.streams)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    topology: TopologySpec
    algorithm: Algorithm = Algorithm.SERVICE_CARVING
    election: ElectionSection = field(default_factory=ElectionSection)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    traffic: TrafficSection = field(default_factory=TrafficSection)
    runs: int = 1
    seed: int = 0
    duration: float = 1.0
    # Extra simulated time after `duration` so in-flight packets land.
    drain: float = 0.0
    # PEs up (and converged) at t=0; empty means every PE of the topology.
    initial_pes: Tuple[str, ...] = ()
    events: Tuple[ScenarioEvent, ...] = ()

    def sweep_points(self) -> List[Tuple[float, float]]:
        return [(d, r) for d in self.election.inter_pe_delays for r in self.traffic.rate_points()]

    def build_topology(self) -> Topology:
        return build_topology(self.topology)

    def validate(self) -> Topology:
        """Checks every field; returns the built topology. Raises ScenarioError naming the field."""
        if self.runs < 1:
            raise ScenarioError("runs", "must be >= 1")
        if self.duration <= 0:
            raise ScenarioError("duration", "must be > 0")
        if self.drain < 0:
            raise ScenarioError("drain", "must be >= 0")
        if not self.election.inter_pe_delays:
            raise ScenarioError("election.inter_pe_delay", "sweep list is empty")
        if any(d < 0 for d in self.election.inter_pe_delays):
            raise ScenarioError("election.inter_pe_delay", "delays must be >= 0")
        if any(r < 0 for r in self.traffic.bum_rates):
            raise ScenarioError("traffic.bum_rates_mbps", "rates must be >= 0")
        if self.traffic.bum_rates and self.traffic.measured() is None:
            raise ScenarioError("traffic.bum_rates_mbps", "no BUM stream to apply the rates to")
        try:
            self.election.config_for(self.election.inter_pe_delays[0], self.algorithm)
        except ElectionError as exc:
            raise ScenarioError("election", str(exc)) from exc
        try:
            topology = self.build_topology()
        except TopologyError as exc:
            raise ScenarioError("topology", str(exc)) from exc
        for pe in self.initial_pes:
            if pe not in topology.pes:
                raise ScenarioError("initial_pes", f"{pe!r} is not a PE")
        for i, stream in enumerate(self.traffic.streams):
            for end in (stream.src, stream.dst):
                if end not in topology.nodes:
                    raise ScenarioError(f"traffic.streams[{i}]", f"unknown node {end!r}")
            if stream.vni is not None and stream.vni not in topology.networks:
                raise ScenarioError(f"traffic.streams[{i}].vni", f"unknown network {stream.vni}")
        watch = self.traffic.watch_link
        if watch is not None and watch not in {link.id for link in topology.links.values()}:
            raise ScenarioError("traffic.watch_link", f"unknown link {watch!r}")
        for i, event in enumerate(self.events):
            where = f"events[{i}]"
            if event.at < 0:
                raise ScenarioError(f"{where}.at", "must be >= 0")
            if event.pe is not None and event.pe not in topology.pes:
                raise ScenarioError(where, f"{event.pe!r} is not a PE")
            if event.kind in (EventKind.SET_DF, EventKind.RESUME_DYNAMIC) and event.vni not in topology.networks:
                raise ScenarioError(f"{where}.vni", f"unknown network {event.vni}")
        return topology


def _require(table: Dict[str, Any], key: str, where: str) -> Any:
    if key not in table:
        raise ScenarioError(f"{where}.{key}" if where else key, "is required")
    return table[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(where, f"expected a number, got {value!r}")
    return float(value)


def _integer(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(where, f"expected an integer, got {value!r}")
    return value


def _number_list(value: Any, where: str) -> Tuple[float, ...]:
    values = value if isinstance(value, list) else [value]
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(values))


def _parse_topology(table: Dict[str, Any]) -> TopologySpec:
    nodes = []
    for i, node in enumerate(table.get("nodes", [])):
        where = f"topology.nodes[{i}]"
        node_id = str(_require(node, "id", where))
        role = str(_require(node, "role", where)).upper()
        try:
            nodes.append((node_id, Role(role)))
        except ValueError as exc:
            raise ScenarioError(f"{where}.role", f"unknown role {role!r}") from exc
    links = []
    for i, link in enumerate(table.get("links", [])):
        where = f"topology.links[{i}]"
        links.append(
            LinkSpec(
                a=str(_require(link, "a", where)),
                b=str(_require(link, "b", where)),
                bandwidth_bps=_number(link.get("bandwidth_bps", GBPS), f"{where}.bandwidth_bps"),
                delay_s=_number(link.get("delay_s", DEFAULT_DELAY_S), f"{where}.delay_s"),
                queue_pkts=_integer(link.get("queue_pkts", DEFAULT_QUEUE_PKTS), f"{where}.queue_pkts"),
                congested=bool(link.get("congested", False)),
                duplex=bool(link.get("duplex", True)),
            )
        )
    networks = []
    for i, net in enumerate(table.get("networks", [])):
        where = f"topology.networks[{i}]"
        try:
            networks.append(
                LogicalNetwork(
                    vni=_integer(_require(net, "vni", where), f"{where}.vni"),
                    participating_tors=frozenset(_require(net, "tors", where)),
                    esi=str(net.get("esi", "ES-1")),
                    evi=str(net.get("evi", "EVI-1")),
                    pes=frozenset(net.get("pes", [])),
                )
            )
        except TopologyError as exc:
            raise ScenarioError(where, str(exc)) from exc
    preset_name = table.get("preset")
    if preset_name is None and not nodes:
        raise ScenarioError("topology", "needs `preset` or a `nodes` list")
    return TopologySpec(preset=preset_name, nodes=tuple(nodes), links=tuple(links), networks=tuple(networks))


def _parse_stream(table: Dict[str, Any], where: str) -> StreamSpec:
    kind_name = str(table.get("kind", "BACKGROUND")).upper()
    try:
        kind = PacketKind(kind_name)
    except ValueError as exc:
        raise ScenarioError(f"{where}.kind", f"unknown stream kind {kind_name!r}") from exc
    ramp = None
    if "ramp" in table:
        r = table["ramp"]
        try:
            ramp = Ramp(
                step_bps=_number(_require(r, "step_bps", f"{where}.ramp"), f"{where}.ramp.step_bps"),
                step_duration=_number(_require(r, "step_duration", f"{where}.ramp"), f"{where}.ramp.step_duration"),
                max_bps=_number(_require(r, "max_bps", f"{where}.ramp"), f"{where}.ramp.max_bps"),
                initial_bps=_number(r.get("initial_bps", 0.0), f"{where}.ramp.initial_bps"),
            )
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{where}.ramp", str(exc)) from exc
    try:
        return StreamSpec(
            name=str(table.get("name", where)),
            kind=kind,
            src=str(_require(table, "src", where)),
            dst=str(_require(table, "dst", where)),
            start=_number(table.get("start", 0.0), f"{where}.start"),
            stop=_number(_require(table, "stop", where), f"{where}.stop"),
            rate_bps=_number(table.get("rate_bps", 0.0), f"{where}.rate_bps"),
            pkt_size=_integer(table.get("pkt_size", DEFAULT_PKT_SIZE), f"{where}.pkt_size"),
            ramp=ramp,
            vni=None if table.get("vni") is None else _integer(table["vni"], f"{where}.vni"),
            jitter=_number(table.get("jitter", 0.0), f"{where}.jitter"),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(where, str(exc)) from exc


def _parse_event(table: Dict[str, Any], where: str) -> ScenarioEvent:
    at = _number(_require(table, "at", where), f"{where}.at")
    if "insert_pe" in table:
        return ScenarioEvent(at, EventKind.INSERT_PE, pe=str(table["insert_pe"]))
    if "set_df" in table:
        vni = _integer(_require(table, "vni", where), f"{where}.vni")
        return ScenarioEvent(at, EventKind.SET_DF, pe=str(table["set_df"]), vni=vni)
    if "resume_dynamic" in table:
        return ScenarioEvent(at, EventKind.RESUME_DYNAMIC, vni=_integer(table["resume_dynamic"], f"{where}.resume_dynamic"))
    raise ScenarioError(where, "needs one of insert_pe, set_df, resume_dynamic")


def parse_scenario(data: Dict[str, Any], name: str = "scenario") -> ScenarioConfig:
    algo_name = str(data.get("algorithm", Algorithm.SERVICE_CARVING.value))
    try:
        algorithm = Algorithm(algo_name)
    except ValueError as exc:
        raise ScenarioError("algorithm", f"unknown algorithm {algo_name!r}") from exc

    e = data.get("election", {})
    late_route = str(e.get("late_route", "timer"))
    if late_route not in LATE_ROUTE_POLICIES:
        raise ScenarioError("election.late_route", f"must be one of {LATE_ROUTE_POLICIES}")
    election = ElectionSection(
        timer=_number(e.get("timer", 3.0), "election.timer"),
        jitter=_number(e.get("jitter", 0.005), "election.jitter"),
        inter_pe_delays=_number_list(e.get("inter_pe_delay", 0.0), "election.inter_pe_delay"),
        late_route=late_route,
        block_on_route=bool(e.get("block_on_route", False)),
    )

    c = data.get("controller", {})
    try:
        controller = ControllerConfig(
            poll_interval=_number(c.get("poll_interval", 5.0), "controller.poll_interval"),
            congestion_threshold=_number(c.get("congestion_threshold", 0.95), "controller.congestion_threshold"),
            hold_polls=_integer(c.get("hold_polls", 2), "controller.hold_polls"),
            oob_delay=_number(c.get("oob_delay", 0.001), "controller.oob_delay"),
            rule_grace=_number(c.get("rule_grace", 0.01), "controller.rule_grace"),
        )
    except ControllerError as exc:
        raise ScenarioError("controller", str(exc)) from exc

    t = data.get("traffic", {})
    streams = tuple(_parse_stream(s, f"traffic.streams[{i}]") for i, s in enumerate(t.get("streams", [])))
    traffic = TrafficSection(
        streams=streams,
        bum_rates=tuple(r * MBPS for r in _number_list(t.get("bum_rates_mbps", []), "traffic.bum_rates_mbps")),
        measured_stream=t.get("measured_stream"),
        watch_link=None if t.get("watch_link") is None else str(t["watch_link"]),
    )

    return ScenarioConfig(
        name=str(data.get("name", name)),
        topology=_parse_topology(_require(data, "topology", "")),
        algorithm=algorithm,
        election=election,
        controller=controller,
        traffic=traffic,
        runs=_integer(data.get("runs", 1), "runs"),
        seed=_integer(data.get("seed", 0), "seed"),
        duration=_number(_require(data, "duration", ""), "duration"),
        drain=_number(data.get("drain", 0.0), "drain"),
        initial_pes=tuple(data.get("initial_pes", [])),
        events=tuple(_parse_event(ev, f"events[{i}]") for i, ev in enumerate(data.get("events", []))),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ScenarioError("scenario", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError("scenario", f"{path} is not valid TOML: {exc}") from exc
    config = parse_scenario(data, name=path.stem)
    logger.debug("loaded scenario %s from %s", config.name, path)
    return config


def _fig6(vni: int) -> TopologySpec:
    return TopologySpec(
        preset="fig6",
        networks=(LogicalNetwork(vni, frozenset({"TOR-1", "TOR-2"}), "ES-1", "EVI-1"),),
    )


def exp1(time_scale: float = 1.0) -> ScenarioConfig:
    """PE-2 joins an ES where PE-1 is DF; the DF moves to PE-2."""
    s = time_scale
    vni = 1001
    duration = 0.05 * s
    bum = StreamSpec("bum", PacketKind.BUM, "BUM-Source", "Sink-1", start=0.0, stop=duration, rate_bps=75 * MBPS, vni=vni)
    return ScenarioConfig(
        name="exp1",
        topology=_fig6(vni),
        election=ElectionSection(
            timer=0.010,
            jitter=0.002,
            inter_pe_delays=(0.0, 0.005, 0.010, 0.015, 0.020),
        ),
        traffic=TrafficSection(streams=(bum,), bum_rates=(75 * MBPS, 150 * MBPS)),
        runs=10,
        seed=1,
        duration=duration,
        drain=0.1,
        initial_pes=("PE-1",),
        events=(
            ScenarioEvent(0.010 * s, EventKind.INSERT_PE, pe="PE-2"),
            ScenarioEvent(0.010 * s, EventKind.SET_DF, pe="PE-2", vni=vni),
        ),
    )


def exp2(time_scale: float = 0.01) -> ScenarioConfig:
    """Background load congests the DF's tree; the controller moves BUM to the other PE."""
    s = time_scale
    vni = 1000
    poll = 5.0 * s
    duration = 75.0 * s
    # Emission offset of every exp2 source, as a fraction of its inter-packet gap.
    jitter = 0.5
    streams = (
        StreamSpec(
            "background-1",
            PacketKind.BACKGROUND,
            "Source-1",
            "Sink-1",
            start=0.0,
            stop=duration,
            rate_bps=850 * MBPS,
            jitter=jitter,
        ),
        StreamSpec(
            "background-2",
            PacketKind.BACKGROUND,
            "Source-2",
            "Sink-1",
            start=5.0 * s,
            stop=duration,
            ramp=Ramp(step_bps=25 * MBPS, step_duration=2 * poll, max_bps=150 * MBPS),
            jitter=jitter,
        ),
        StreamSpec(
            "bum",
            PacketKind.BUM,
            "BUM-Source",
            "Sink-1",
            start=5.0 * s,
            stop=duration,
            rate_bps=50 * MBPS,
            vni=vni,
            jitter=jitter,
        ),
    )
    return ScenarioConfig(
        name="exp2",
        topology=_fig6(vni),
        controller=ControllerConfig(poll_interval=poll, congestion_threshold=0.95, hold_polls=2),
        traffic=TrafficSection(
            streams=streams,
            bum_rates=(50 * MBPS, 100 * MBPS),
            measured_stream="bum",
            watch_link="CE-1->TOR-1",
        ),
        runs=1,
        seed=1,
        duration=duration,
        drain=0.1,
    )


PRESETS = {"exp1": exp1, "exp2": exp2}


def preset(name: str, time_scale: Optional[float] = None) -> ScenarioConfig:
    try:
        factory = PRESETS[name]
    except KeyError as exc:
        raise ScenarioError("preset", f"unknown preset {name!r} (known: {', '.join(sorted(PRESETS))})") from exc
    if time_scale is not None and time_scale <= 0:
        raise ScenarioError("time_scale", "must be > 0")
    return factory() if time_scale is None else factory(time_scale)
