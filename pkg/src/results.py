from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import pandas as pd

from .traffic import SinkAccount

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6g"
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ResultRow:
    run: int
    algo: str
    inter_pe_delay_ms: float
    bum_rate_mbps: float
    offered: int
    received_total: int
    received_unique: int
    duplicates: int
    lost: int
    loss_pct: float
    df_change_count: int
    # Virtual seconds at which a different PE took over forwarding.
    df_change_times: Tuple[float, ...] = ()


COLUMNS = [f.name for f in fields(ResultRow)]


@dataclass(frozen=True)
class UtilizationRow:
    """BUM loss among the packets emitted during one polling interval, next to the watched link's load."""

    run: int
    algo: str
    bum_rate_mbps: float
    poll_end_s: float
    link: str
    utilization: float
    bum_offered: int
    bum_lost: int
    bum_loss_pct: float


UTILIZATION_COLUMNS = [f.name for f in fields(UtilizationRow)]


def make_row(
    run: int,
    algo: str,
    inter_pe_delay: float,
    bum_rate_bps: float,
    account: SinkAccount,
    df_changes: Sequence[Tuple[float, str, str]],
) -> ResultRow:
    return ResultRow(
        run=run,
        algo=algo,
        inter_pe_delay_ms=inter_pe_delay * 1e3,
        bum_rate_mbps=bum_rate_bps / 1e6,
        offered=account.offered,
        received_total=account.received_total,
        received_unique=account.received_unique,
        duplicates=account.duplicates,
        lost=account.missing,
        loss_pct=account.loss_pct,
        df_change_count=len(df_changes),
        df_change_times=tuple(t for t, _, _ in df_changes),
    )


def sort_rows(rows: Iterable[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=lambda r: (r.algo, r.inter_pe_delay_ms, r.bum_rate_mbps, r.run))


def _sig6(value: float) -> float:
    return float(FLOAT_FORMAT % value)


def rows_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in rows], columns=COLUMNS)


def to_csv_text(rows: Sequence[ResultRow]) -> str:
    frame = rows_frame(rows)
    frame["df_change_times"] = [";".join(FLOAT_FORMAT % t for t in times) for times in frame["df_change_times"]]
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def to_json_text(rows: Sequence[ResultRow]) -> str:
    frame = rows_frame(rows)
    for column in ("inter_pe_delay_ms", "bum_rate_mbps", "loss_pct"):
        frame[column] = frame[column].map(_sig6)
    frame["df_change_times"] = [[_sig6(t) for t in times] for times in frame["df_change_times"]]
    return frame.to_json(orient="records", indent=2) + "\n"


def _write(text: str, path: str | Path, count: int) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise RuntimeError(f"cannot write results to {path}: {exc}") from exc
    logger.info("wrote %d rows to %s", count, path)
    return path


def emit_results(rows: Sequence[ResultRow], path: str | Path, fmt: str = "csv") -> Path:
    """Writes rows with a fixed column order; csv or a JSON array of objects."""
    if not rows:
        raise ValueError("emit_results needs at least one row")
    if fmt not in FORMATS:
        raise ValueError(f"unknown result format {fmt!r}")
    text = to_csv_text(rows) if fmt == "csv" else to_json_text(rows)
    return _write(text, path, len(rows))


def sort_utilization(rows: Iterable[UtilizationRow]) -> List[UtilizationRow]:
    return sorted(rows, key=lambda r: (r.algo, r.bum_rate_mbps, r.run, r.poll_end_s))


def utilization_frame(rows: Sequence[UtilizationRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in rows], columns=UTILIZATION_COLUMNS)


def emit_utilization(rows: Sequence[UtilizationRow], path: str | Path, fmt: str = "csv") -> Path:
    if not rows:
        raise ValueError("emit_utilization needs at least one row")
    if fmt not in FORMATS:
        raise ValueError(f"unknown result format {fmt!r}")
    frame = utilization_frame(rows)
    if fmt == "csv":
        text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    else:
        for column in ("bum_rate_mbps", "poll_end_s", "utilization", "bum_loss_pct"):
            frame[column] = frame[column].map(_sig6)
        text = frame.to_json(orient="records", indent=2) + "\n"
    return _write(text, path, len(rows))


def medians(rows: Sequence[ResultRow], column: str) -> pd.DataFrame:
    """Median of column per (algo, bum rate, delay), over runs."""
    frame = rows_frame(rows)
    return (
        frame.groupby(["algo", "bum_rate_mbps", "inter_pe_delay_ms"], sort=True)[column]
        .median()
        .reset_index()
    )
