from __future__ import annotations

import csv

import pytest

from src.cli import main, parse_args
from src.results import COLUMNS, UTILIZATION_COLUMNS

LINE_SCENARIO = """
name = "line"
algorithm = "sdn"
duration = 0.02

[topology]
nodes = [
  { id = "PE-1", role = "PE" },
  { id = "CE-1", role = "SPINE" },
  { id = "TOR-1", role = "TOR" },
  { id = "H-1", role = "HOST" },
  { id = "H-2", role = "HOST" },
]
links = [
  { a = "H-1", b = "PE-1" },
  { a = "PE-1", b = "CE-1" },
  { a = "CE-1", b = "TOR-1" },
  { a = "TOR-1", b = "H-2" },
]
networks = [{ vni = 10, tors = ["TOR-1"] }]

[[traffic.streams]]
name = "bum"
kind = "BUM"
src = "H-1"
dst = "H-2"
stop = 0.01
rate_bps = 12e6
vni = 10
"""


@pytest.fixture(autouse=True)
def _env(monkeypatch, tmp_path):
    monkeypatch.setenv("EVPNSIM_OUTPUT_DIR", str(tmp_path / "output"))
    monkeypatch.setenv("EVPNSIM_WORKERS", "1")


def test_preset_and_scenario_are_exclusive():
    with pytest.raises(SystemExit):
        parse_args(["--preset", "exp1", "--scenario", "x.toml"])
    with pytest.raises(SystemExit):
        parse_args([])


def test_scenario_run_writes_default_path(tmp_path):
    path = tmp_path / "line.toml"
    path.write_text(LINE_SCENARIO)
    assert main(["--scenario", str(path)]) == 0
    out = tmp_path / "output" / "line_sdn.csv"
    with out.open() as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == COLUMNS
    assert rows[0]["offered"] == "10"
    assert rows[0]["received_unique"] == "10"
    assert rows[0]["lost"] == "0"


def test_watched_link_gets_utilization_table(tmp_path):
    text = LINE_SCENARIO.replace(
        "[[traffic.streams]]",
        '[controller]\npoll_interval = 0.005\n\n[traffic]\nwatch_link = "CE-1->TOR-1"\n\n[[traffic.streams]]',
    )
    path = tmp_path / "line.toml"
    path.write_text(text)
    assert main(["--scenario", str(path)]) == 0
    out = tmp_path / "output" / "line_sdn_utilization.csv"
    with out.open() as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == UTILIZATION_COLUMNS
    assert {row["link"] for row in rows} == {"CE-1->TOR-1"}
    assert sum(int(row["bum_offered"]) for row in rows) == 10
    assert all(row["bum_lost"] == "0" for row in rows)


def test_unwatched_run_writes_no_utilization_table(tmp_path):
    path = tmp_path / "line.toml"
    path.write_text(LINE_SCENARIO)
    assert main(["--scenario", str(path)]) == 0
    assert not (tmp_path / "output" / "line_sdn_utilization.csv").exists()


def test_preset_run_with_overrides(tmp_path):
    out = tmp_path / "exp1.json"
    code = main(["--preset", "exp1", "--algo", "handshake", "--runs", "1", "--format", "json", "--out", str(out)])
    assert code == 0
    assert out.read_text().lstrip().startswith("[")


def test_check_mode_passes_for_handshake():
    assert main(["--preset", "exp1", "--algo", "handshake", "--runs", "1", "--check"]) == 0


def test_bad_scenario_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('duration = 1.0\nalgorithm = "paxos"\n[topology]\npreset = "fig6"\n')
    assert main(["--scenario", str(path)]) == 2
    assert "algorithm" in capsys.readouterr().err
    assert main(["--scenario", str(tmp_path / "missing.toml")]) == 2
    assert main(["--preset", "exp1", "--time-scale", "-1"]) == 2


def test_bad_worker_setting_exits_2(monkeypatch):
    monkeypatch.setenv("EVPNSIM_WORKERS", "many")
    assert main(["--preset", "exp1"]) == 2
