"""
Invariant suite and independent oracles.

Every function returns a list of human-readable violations (empty when the property
holds) so a sweep can gather all of them before deciding the exit status.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from .engine import ForwardingStatus, Transition
from .results import ResultRow, medians
from .services.controller_service import TreeDecision, Verdict
from .topology import MulticastTree, Topology
from .traffic import SinkAccount, StreamSpec

logger = logging.getLogger(__name__)

TREND_MIN_SPEARMAN = 0.9
SDN_LOSS_SPREAD = 1


def conservation_violations(account: SinkAccount) -> List[str]:
    total = account.received_unique + account.dropped + account.blocked + account.in_flight
    if total != account.offered or min(account.offered, account.dropped, account.blocked, account.in_flight) < 0:
        return [
            f"{account.stream}: offered {account.offered} != unique {account.received_unique} + dropped "
            f"{account.dropped} + blocked {account.blocked} + in flight {account.in_flight}"
        ]
    return []


def duplicate_violations(account: SinkAccount) -> List[str]:
    if account.duplicates:
        return [f"{account.stream}: {account.duplicates} duplicate deliveries"]
    return []


def tree_path_violations(
    paths: Iterable[Tuple[Optional[str], Sequence[str]]], trees: Mapping[str, MulticastTree]
) -> List[str]:
    """Each delivered BUM copy must go PE -> ... -> TOR along the links of the tree it was tagged with."""
    violations = []
    for tree_id, path in paths:
        tree = trees.get(tree_id) if tree_id is not None else None
        if tree is None or tree.pe not in path:
            violations.append(f"BUM copy via {list(path)} carries unknown tree {tree_id}")
            continue
        edges = {(link.a, link.b) for link in tree.links}
        start = path.index(tree.pe)
        # Last hop is the TOR handing the copy to the sink host.
        hops = zip(path[start:-2], path[start + 1 : -1])
        stray = [f"{a}->{b}" for a, b in hops if (a, b) not in edges]
        if stray or path[-2] not in tree.leaves:
            violations.append(f"BUM copy via {list(path)} leaves tree {tree_id} at {stray or path[-2]}")
    return violations


def forwarding_intervals(log: Sequence[Transition], vni: int, until: float) -> Dict[str, List[Tuple[float, float]]]:
    """Per PE, the [start, end) intervals during which it was UNBLOCKED for vni."""
    opened: Dict[str, float] = {}
    intervals: Dict[str, List[Tuple[float, float]]] = defaultdict(list)
    for tr in log:
        if tr.vni != vni:
            continue
        if tr.status is ForwardingStatus.UNBLOCKED:
            opened.setdefault(tr.pe, tr.time)
        elif tr.pe in opened:
            intervals[tr.pe].append((opened.pop(tr.pe), tr.time))
    for pe, start in opened.items():
        intervals[pe].append((start, until))
    return dict(intervals)


def exclusivity_violations(log: Sequence[Transition], vni: int) -> List[str]:
    """Replays the transition log in order; two UNBLOCKED PEs at any point is a violation."""
    unblocked = set()
    violations = []
    for tr in log:
        if tr.vni != vni:
            continue
        if tr.status is ForwardingStatus.UNBLOCKED:
            unblocked.add(tr.pe)
        else:
            unblocked.discard(tr.pe)
        if len(unblocked) > 1:
            violations.append(f"vni {vni}: {sorted(unblocked)} UNBLOCKED together at t={tr.time:.6f}")
    return violations


def dual_df_windows(log: Sequence[Transition], vni: int, until: float) -> List[Tuple[float, float]]:
    windows = []
    unblocked = set()
    opened: Optional[float] = None
    for tr in log:
        if tr.vni != vni:
            continue
        if tr.status is ForwardingStatus.UNBLOCKED:
            unblocked.add(tr.pe)
        else:
            unblocked.discard(tr.pe)
        if len(unblocked) > 1 and opened is None:
            opened = tr.time
        elif len(unblocked) < 2 and opened is not None:
            if tr.time > opened:
                windows.append((opened, tr.time))
            opened = None
    if opened is not None and until > opened:
        windows.append((opened, until))
    return windows


def ingress_delays(topology: Topology, stream: StreamSpec, pes: Iterable[str]) -> Dict[str, float]:
    """Idle-path latency from the stream's source host to each PE."""
    delays = {}
    for pe in pes:
        path = topology.route(stream.src, pe)
        delays[pe] = sum(
            stream.pkt_size * 8 / link.bandwidth + link.prop_delay
            for link in (topology.link(a, b) for a, b in zip(path, path[1:]))
        )
    return delays


def predicted_duplicates(
    log: Sequence[Transition],
    stream: StreamSpec,
    delays: Mapping[str, float],
    until: float,
) -> int:
    """Trace-replay oracle: packets that met two forwarding PEs at their ingress instants."""
    intervals = forwarding_intervals(log, stream.vni, until)
    count = 0
    for t in stream.emission_times():
        forwarding = 0
        for pe, delay in delays.items():
            arrival = t + delay
            if any(start <= arrival < end for start, end in intervals.get(pe, ())):
                forwarding += 1
        count += max(0, forwarding - 1)
    return count


def dual_df_oracle_violations(account: SinkAccount, predicted: int, tolerance: int = 1) -> List[str]:
    if abs(account.duplicates - predicted) > tolerance:
        return [f"{account.stream}: {account.duplicates} duplicates, trace replay predicts {predicted} (±{tolerance})"]
    return []


def hysteresis_violations(decisions: Sequence[TreeDecision], hold_polls: int, poll_interval: float) -> List[str]:
    violations = []
    last: Dict[int, float] = {}
    for d in decisions:
        if d.verdict is not Verdict.SWITCH:
            continue
        spacing = hold_polls * poll_interval
        if d.vni in last and d.time - last[d.vni] < spacing - 1e-9:
            violations.append(f"vni {d.vni}: switches at t={last[d.vni]:.6f} and t={d.time:.6f} closer than {spacing}")
        last[d.vni] = d.time
        if d.new_tree is None or not d.weights[d.new_tree] < d.weights[d.active_tree]:
            violations.append(f"vni {d.vni}: switch at t={d.time:.6f} to a tree that is not strictly lighter")
    return violations


def _spearman(x: Sequence[float], y: Sequence[float]) -> float:
    ranked = pd.DataFrame({"x": list(x), "y": list(y)}).rank()
    return float(ranked["x"].corr(ranked["y"]))


def trend_violations(rows: Sequence[ResultRow]) -> List[str]:
    """Sweep-level shape: carving duplicates and handshake losses rise with delay, SDN losses stay flat."""
    violations = []
    for algo, column in (("service_carving", "duplicates"), ("handshake", "lost"), ("sdn", "lost")):
        algo_rows = [r for r in rows if r.algo == algo]
        if not algo_rows:
            continue
        table = medians(algo_rows, column)
        for rate, group in table.groupby("bum_rate_mbps"):
            values = group.sort_values("inter_pe_delay_ms")
            if len(values) < 2:
                continue
            ys = list(values[column])
            if algo == "sdn":
                if max(ys) - min(ys) > SDN_LOSS_SPREAD:
                    violations.append(f"sdn @ {rate:g} Mbps: median loss varies {min(ys)}..{max(ys)} across delays")
                continue
            if all(b >= a for a, b in zip(ys, ys[1:])):
                continue
            rho = _spearman(list(values["inter_pe_delay_ms"]), ys)
            if not rho >= TREND_MIN_SPEARMAN:
                violations.append(f"{algo} @ {rate:g} Mbps: median {column} vs delay Spearman {rho:.3f} < {TREND_MIN_SPEARMAN}")
    return violations


def determinism_violations(first: str, second: str) -> List[str]:
    if first != second:
        return ["two executions with the same seed produced different output"]
    return []
