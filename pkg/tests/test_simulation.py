"""End-to-end runs of the two built-in experiments."""

from __future__ import annotations

from dataclasses import replace

import pytest

from src.checks import dual_df_windows, tree_path_violations, trend_violations
from src.results import medians, to_csv_text
from src.scenario import MBPS, Algorithm, exp1, exp2
from src.services.controller_service import Verdict
from src.simulation import RunPoint, Simulation, check_scenario, run_scenario, run_sweep

# 1500-byte packets at 75 Mbps.
GAP_75 = 1500 * 8 / (75 * MBPS)
GAP_150 = GAP_75 / 2
# One full-size packet across the RR->PE link; ES discovery of an inserted PE waits this long.
CORE_JOIN = 0.001 + 1500 * 8 / 1e9


def _exp1(algorithm: Algorithm, runs: int = 3, **election):
    config = replace(exp1(), algorithm=algorithm, runs=runs)
    if election:
        config = replace(config, election=replace(config.election, **election))
    return config


def _by_delay(rows, column):
    table = medians(rows, column)
    table = table[table["bum_rate_mbps"] == 75]
    return list(table.sort_values("inter_pe_delay_ms")[column])


@pytest.mark.parametrize("rate_mbps", [75, 150])
def test_offered_count(rate_mbps):
    config = _exp1(Algorithm.HANDSHAKE)
    sim = Simulation(config, RunPoint(0, 0.005, rate_mbps * MBPS))
    sim.run()
    row = sim.row()
    expected = sim.measured_stream().expected_offered()
    assert abs(row.offered - expected) <= 1
    assert row.offered == row.received_unique + row.lost


def test_service_carving_duplicates_grow_with_delay():
    result = run_sweep(_exp1(Algorithm.SERVICE_CARVING))
    assert result.violations == []
    duplicates = _by_delay(result.rows, "duplicates")
    assert all(b > a for a, b in zip(duplicates, duplicates[1:]))
    assert trend_violations(result.rows) == []


@pytest.mark.parametrize("delay", [0.005, 0.010, 0.020])
def test_service_carving_matches_overlap_window(delay):
    config = _exp1(Algorithm.SERVICE_CARVING, jitter=0.0)
    sim = Simulation(config, RunPoint(0, delay, 75 * MBPS))
    sim.run()
    windows = dual_df_windows(sim.engine.df_table.log, 1001, sim.end_time)
    assert windows == [(pytest.approx(0.020 + CORE_JOIN), pytest.approx(0.020 + CORE_JOIN + delay))]
    assert abs(sim.row().duplicates - delay / GAP_75) <= 1
    assert sim.violations() == []


def test_handshake_trades_duplicates_for_loss():
    result = run_sweep(_exp1(Algorithm.HANDSHAKE))
    assert result.violations == []
    assert all(row.duplicates == 0 for row in result.rows)
    assert all(row.df_change_count == 1 for row in result.rows)
    lost = _by_delay(result.rows, "lost")
    assert lost[0] == 0
    assert all(b > a for a, b in zip(lost, lost[1:]))
    assert trend_violations(result.rows) == []


def test_handshake_without_delay_loses_nothing():
    config = _exp1(Algorithm.HANDSHAKE, runs=1, jitter=0.0)
    sim = Simulation(config, RunPoint(0, 0.0, 150 * MBPS))
    sim.run()
    row = sim.row()
    assert (row.lost, row.duplicates, row.df_change_count) == (0, 0, 1)
    assert sim.violations() == []


def test_handshake_gap_is_one_way_delay():
    config = _exp1(Algorithm.HANDSHAKE, runs=1, jitter=0.0)
    sim = Simulation(config, RunPoint(0, 0.010, 150 * MBPS))
    sim.run()
    # PE-1 blocks when the REQUEST lands, PE-2 forwards once the RELEASE comes back.
    assert abs(sim.row().lost - 0.010 / GAP_150) <= 1
    assert sim.row().duplicates == 0


def test_sdn_loss_independent_of_delay():
    result = run_sweep(_exp1(Algorithm.SDN, runs=1))
    assert result.violations == []
    assert all(row.duplicates == 0 for row in result.rows)
    assert all(row.df_change_times == (pytest.approx(0.012),) for row in result.rows)
    lost = {row.lost for row in result.rows if row.bum_rate_mbps == 75}
    assert len(lost) == 1
    assert abs(lost.pop() - 0.001 / GAP_75) <= 1


def test_same_seed_same_bytes():
    config = _exp1(Algorithm.SERVICE_CARVING, runs=2)
    serial = run_sweep(config, workers=1)
    parallel = run_sweep(config, workers=2)
    assert to_csv_text(serial.rows) == to_csv_text(parallel.rows)
    _, problems = check_scenario(config)
    assert problems == []


def test_run_scenario_rows_cover_every_point():
    config = _exp1(Algorithm.HANDSHAKE, runs=1)
    rows = run_scenario(config)
    assert len(rows) == 10
    assert to_csv_text(rows) == to_csv_text(run_sweep(config).rows)


def test_other_seed_moves_jitter():
    config = _exp1(Algorithm.SERVICE_CARVING, runs=1)
    first = Simulation(config, RunPoint(0, 0.005, 75 * MBPS))
    second = Simulation(replace(config, seed=99), RunPoint(0, 0.005, 75 * MBPS))
    assert first.jitter != second.jitter
    assert all(0.0 <= j <= config.election.jitter for j in first.jitter.values())


EXP2_RATES = (50, 100)
WATCHED = "CE-1->TOR-1"


@pytest.fixture(scope="module")
def exp2_runs():
    runs = {}
    for rate in EXP2_RATES:
        for algorithm in (Algorithm.SERVICE_CARVING, Algorithm.SDN):
            sim = Simulation(replace(exp2(), algorithm=algorithm), RunPoint(0, 0.0, rate * MBPS))
            sim.run()
            runs[algorithm, rate] = sim
    return runs


@pytest.mark.parametrize("rate", EXP2_RATES)
def test_exp2_sdn_moves_bum_once(exp2_runs, rate):
    sim = exp2_runs[Algorithm.SDN, rate]
    assert sim.violations() == []
    row = sim.row()
    assert (row.df_change_count, row.duplicates) == (1, 0)


@pytest.mark.parametrize("rate", EXP2_RATES)
def test_exp2_service_carving_never_moves(exp2_runs, rate):
    sim = exp2_runs[Algorithm.SERVICE_CARVING, rate]
    assert sim.violations() == []
    assert sim.row().df_change_count == 0


@pytest.mark.parametrize("rate", EXP2_RATES)
def test_exp2_sdn_loses_less_bum(exp2_runs, rate):
    carving = exp2_runs[Algorithm.SERVICE_CARVING, rate].row()
    sdn = exp2_runs[Algorithm.SDN, rate].row()
    assert carving.lost > 0
    assert carving.loss_pct >= 1.5 * sdn.loss_pct


@pytest.mark.parametrize("rate", EXP2_RATES)
def test_exp2_switch_waits_for_hold_polls(exp2_runs, rate):
    sim = exp2_runs[Algorithm.SDN, rate]
    decisions = [d for d in sim.controller.decisions if d.vni == 1000]
    intervals = sim.report.intervals
    assert len(decisions) == len(intervals)
    first = next(i for i, d in enumerate(decisions) if d.verdict is Verdict.SWITCH)
    hold = sim.config.controller.hold_polls
    assert first >= hold - 1
    assert all(d.verdict is Verdict.KEEP for d in decisions[:first])
    assert all(stats.utilization(WATCHED) > 0.95 for stats in intervals[first - hold + 1 : first + 1])
    assert decisions[first].new_tree == "1000:CE-2/PE-2"


@pytest.mark.parametrize("algorithm", [Algorithm.SERVICE_CARVING, Algorithm.SDN])
def test_exp2_bum_copies_follow_active_tree(exp2_runs, algorithm):
    sim = exp2_runs[algorithm, 50]
    paths = sim.ledger.delivered_paths("bum")
    assert paths
    assert tree_path_violations(paths, sim.fabric.trees) == []
    assert {tree_id for tree_id, _ in paths} <= {"1000:CE-1/PE-1", "1000:CE-2/PE-2"}


@pytest.mark.parametrize("rate", EXP2_RATES)
def test_exp2_per_poll_loss_follows_watched_link(exp2_runs, rate):
    sim = exp2_runs[Algorithm.SERVICE_CARVING, rate]
    rows = sim.utilization_rows()
    assert rows
    assert {r.link for r in rows} == {WATCHED}
    assert sum(r.bum_offered for r in rows) == sim.row().offered
    lossy = [r for r in rows if r.bum_lost]
    assert lossy
    assert all(r.utilization > 0.95 for r in lossy)
    assert all(r.bum_rate_mbps == rate for r in rows)


def test_exp2_sweep_carries_utilization_table():
    base = exp2()
    config = replace(base, algorithm=Algorithm.SDN, traffic=replace(base.traffic, bum_rates=(50 * MBPS,)))
    result = run_sweep(config)
    assert result.violations == []
    assert result.utilization
    assert [r.poll_end_s for r in result.utilization] == sorted(r.poll_end_s for r in result.utilization)
