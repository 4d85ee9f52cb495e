"""
One seeded simulation run, and the sweep runner that executes runs × delays × rates.
"""

from __future__ import annotations

import logging
import multiprocessing
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checks
from .engine import DEFAULT_PKT_SIZE, Engine, Fabric, SimulationReport
from .errors import InvariantViolation
from .results import ResultRow, UtilizationRow, make_row, sort_rows, sort_utilization, to_csv_text
from .scenario import Algorithm, EventKind, ScenarioConfig, ScenarioEvent
from .services.controller_service import SdnController
from .services.election_service import ElectionService, modulo_elect
from .topology import MulticastTree, Role, Topology, enumerate_trees, home_tree
from .traffic import SinkAccount, StreamLedger, StreamSpec, TrafficSource

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunPoint:
    run: int
    inter_pe_delay: float
    bum_rate: float


@dataclass
class RunOutcome:
    point: RunPoint
    row: ResultRow
    violations: List[str] = field(default_factory=list)
    utilization: List[UtilizationRow] = field(default_factory=list)


class Simulation:
    """Wires topology, data plane, control plane and traffic for one run of a scenario."""

    def __init__(self, config: ScenarioConfig, point: RunPoint, topology: Optional[Topology] = None):
        self.config = config
        self.point = point
        self.topology = topology or config.build_topology()
        self.ledger = StreamLedger()
        self.engine = Engine(self.topology, self.ledger)
        self.fabric = Fabric(self.engine, self.topology)
        self.streams = config.traffic.with_bum_rate(point.bum_rate)
        self.candidates: Dict[int, List[MulticastTree]] = {
            vni: enumerate_trees(self.topology, net) for vni, net in sorted(self.topology.networks.items())
        }
        rng = np.random.default_rng(config.seed + point.run)
        self.jitter = {pe: float(rng.uniform(0.0, config.election.jitter)) for pe in self.topology.pes}
        self.election: Optional[ElectionService] = None
        self.controller: Optional[SdnController] = None
        self.report: Optional[SimulationReport] = None

    @property
    def initial_pes(self) -> List[str]:
        return sorted(self.config.initial_pes or self.topology.pes)

    @property
    def end_time(self) -> float:
        return self.config.duration + self.config.drain

    def setup(self) -> None:
        initial = self.initial_pes
        self.fabric.up_pes.update(initial)
        if self.config.algorithm is Algorithm.SDN:
            self.controller = SdnController(
                self.engine, self.fabric, self.topology, self.config.controller, self.candidates
            )
            initial_df = {}
            for vni, net in sorted(self.topology.networks.items()):
                up = [pe for pe in self.topology.network_pes(net) if pe in initial]
                if up:
                    initial_df[vni] = modulo_elect(vni, up)
            self.controller.start(initial_df)
        else:
            for vni, trees in self.candidates.items():
                for pe in self.topology.network_pes(self.topology.network(vni)):
                    tree = home_tree(trees, pe)
                    self.fabric.install_rules(tree)
                    self.fabric.set_egress(pe, vni, tree)
            self.election = ElectionService(
                self.engine,
                self.topology,
                self.config.election.config_for(self.point.inter_pe_delay, self.config.algorithm),
                self.jitter,
            )
            self.election.bootstrap(initial)
        self.engine.start_polling(self.config.controller.poll_interval)

        for index, spec in enumerate(self.streams):
            rng = np.random.default_rng([self.config.seed + self.point.run, index + 1])
            TrafficSource(spec, self.engine, self.ledger, self.fabric.inject, rng).start()
        for event in self.config.events:
            self.engine.schedule(event.at, partial(self._apply_event, event), f"{event.kind.value} @ {event.at}")

    def _apply_event(self, event: ScenarioEvent) -> None:
        now = self.engine.now
        if event.kind is EventKind.INSERT_PE:
            logger.debug("t=%.6f %s inserted", now, event.pe)
            self.fabric.up_pes.add(event.pe)
            if self.election is not None:
                self.engine.schedule(
                    now + self.core_join_delay(event.pe),
                    partial(self._discover_segments, event.pe),
                    f"es-discovery {event.pe}",
                )
        elif self.controller is None:
            logger.warning(
                "ignoring %s event at t=%s: %s has no controller", event.kind.value, event.at, self.config.algorithm.value
            )
        elif event.kind is EventKind.SET_DF:
            net = self.topology.network(event.vni)
            self.controller.set_df_deterministic(net.evi, event.vni, event.pe)
        else:
            self.controller.resume_dynamic(event.vni)

    def core_join_delay(self, pe: str) -> float:
        """Time for one full-size packet to cross the core link into pe; ES discovery waits for it."""
        links = [
            link
            for link in self.topology.links.values()
            if link.b == pe and self.topology.nodes[link.a].role is Role.CORE
        ]
        return max((link.prop_delay + DEFAULT_PKT_SIZE * 8 / link.bandwidth for link in links), default=0.0)

    def _discover_segments(self, pe: str) -> None:
        for esi in self.election.esis_of(pe):
            self.election.on_es_discovered(pe, esi, self.engine.now)

    def run(self) -> SimulationReport:
        self.setup()
        self.report = self.engine.run_until(self.end_time)
        return self.report

    def measured_stream(self) -> Optional[StreamSpec]:
        """The measured stream with this run's sweep rate applied."""
        spec = self.config.traffic.measured()
        if spec is None:
            return None
        return next(s for s in self.streams if s.name == spec.name)

    def row(self) -> ResultRow:
        stream = self.measured_stream()
        account = self.ledger.account(stream.name) if stream is not None else SinkAccount("")
        vni = stream.vni if stream is not None else None
        vnis = [vni] if vni is not None else sorted(self.topology.networks)
        changes = sorted(c for v in vnis for c in self.engine.df_table.df_changes(v))
        return make_row(
            self.point.run,
            self.config.algorithm.value,
            self.point.inter_pe_delay,
            self.point.bum_rate,
            account,
            changes,
        )

    def utilization_rows(self) -> List[UtilizationRow]:
        """Per polling interval: the watched link's utilization and the BUM packets emitted in it that never arrived."""
        watch = self.config.traffic.watch_link
        stream = self.measured_stream()
        if watch is None or stream is None or self.report is None:
            return []
        rows = []
        for stats in self.report.intervals:
            offered, lost = self.ledger.window_loss(stream.name, stats.ends_at - stats.interval, stats.ends_at)
            if not offered:
                continue
            rows.append(
                UtilizationRow(
                    run=self.point.run,
                    algo=self.config.algorithm.value,
                    bum_rate_mbps=self.point.bum_rate / 1e6,
                    poll_end_s=stats.ends_at,
                    link=watch,
                    utilization=stats.utilization(watch),
                    bum_offered=offered,
                    bum_lost=lost,
                    bum_loss_pct=100.0 * lost / offered,
                )
            )
        return rows

    def violations(self) -> List[str]:
        """Per-run invariants for the algorithm in use."""
        found = []
        for account in self.ledger.accounts().values():
            found += checks.conservation_violations(account)
        measured = self.measured_stream()
        if measured is None or measured.vni is None:
            return found
        account = self.ledger.account(measured.name)
        log = self.engine.df_table.log
        algorithm = self.config.algorithm
        found += checks.tree_path_violations(self.ledger.delivered_paths(measured.name), self.fabric.trees)
        if algorithm in (Algorithm.SDN, Algorithm.HANDSHAKE):
            found += checks.duplicate_violations(account)
            found += checks.exclusivity_violations(log, measured.vni)
        if algorithm is Algorithm.SDN and self.controller is not None:
            found += checks.hysteresis_violations(
                self.controller.decisions, self.config.controller.hold_polls, self.config.controller.poll_interval
            )
        if algorithm is Algorithm.SERVICE_CARVING and not any(self.report.link_drops.values()):
            pes = self.topology.network_pes(self.topology.network(measured.vni))
            delays = checks.ingress_delays(self.topology, measured, pes)
            predicted = checks.predicted_duplicates(log, measured, delays, self.end_time)
            found += checks.dual_df_oracle_violations(account, predicted)
        return [f"run {self.point.run} delay {self.point.inter_pe_delay * 1e3:g} ms: {v}" for v in found]


def execute_point(config: ScenarioConfig, point: RunPoint) -> RunOutcome:
    sim = Simulation(config, point)
    sim.run()
    return RunOutcome(point, sim.row(), sim.violations(), sim.utilization_rows())


def sweep(config: ScenarioConfig) -> List[RunPoint]:
    return [
        RunPoint(run, delay, rate)
        for delay, rate in config.sweep_points()
        for run in range(config.runs)
    ]


@dataclass
class SweepResult:
    rows: List[ResultRow]
    violations: List[str]
    utilization: List[UtilizationRow] = field(default_factory=list)

    def raise_for_violations(self) -> None:
        if self.violations:
            raise InvariantViolation("; ".join(self.violations))


def run_sweep(config: ScenarioConfig, workers: int = 1) -> SweepResult:
    config.validate()
    points = sweep(config)
    logger.info(
        "%s/%s: %d simulations (%d runs x %d sweep points)",
        config.name,
        config.algorithm.value,
        len(points),
        config.runs,
        len(config.sweep_points()),
    )
    job = partial(execute_point, config)
    if workers > 1 and len(points) > 1:
        with multiprocessing.Pool(processes=min(workers, len(points))) as pool:
            outcomes = pool.map(job, points)
    else:
        outcomes = [job(point) for point in points]
    rows = sort_rows(o.row for o in outcomes)
    violations = [v for o in outcomes for v in o.violations]
    for v in violations:
        logger.debug("invariant violation: %s", v)
    utilization = sort_utilization(u for o in outcomes for u in o.utilization)
    return SweepResult(rows, violations, utilization)


def run_scenario(config: ScenarioConfig, workers: int = 1) -> List[ResultRow]:
    return run_sweep(config, workers).rows


def check_scenario(config: ScenarioConfig, workers: int = 1) -> Tuple[SweepResult, List[str]]:
    """Full invariant suite: per-run checks, sweep trend, and a second run for determinism."""
    first = run_sweep(config, workers)
    second = run_sweep(config, workers)
    problems = list(first.violations)
    problems += checks.trend_violations(first.rows)
    problems += checks.determinism_violations(to_csv_text(first.rows), to_csv_text(second.rows))
    return first, problems
