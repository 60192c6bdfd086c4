"""Per-round trace records and their CSV representation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

CSV_VERSION = 1
CSV_COLUMNS = (
    "run_id", "repeat", "round", "train_loss", "grad_norm", "val_accuracy",
    "eta", "comm_rounds", "wall_ms", "status",
)
STATUSES = ("ok", "diverged")


@dataclass
class TraceRecord:
    round: int
    train_loss: float
    grad_norm: float
    val_accuracy: float | None
    eta: float
    comm_rounds: int
    wall_ms: float = 0.0
    status: str = "ok"
    run_id: str = ""
    repeat: int = 0
    # not part of the CSV schema; regression runs report it in the summary
    val_loss: float | None = None

    def row(self, include_wall: bool = True) -> list[str]:
        values = asdict(self)
        out = []
        for col in CSV_COLUMNS:
            v = values[col]
            if col == "wall_ms" and not include_wall:
                v = 0.0
            out.append(_fmt(v))
        return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        # repr round-trips float64 exactly
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def diverged_marker(round_index: int, comm_rounds: int, run_id: str = "",
                    repeat: int = 0) -> TraceRecord:
    nan = float("nan")
    return TraceRecord(round_index, nan, nan, None, nan, comm_rounds,
                       status="diverged", run_id=run_id, repeat=repeat)


def format_csv(records, include_wall: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.row(include_wall))
    return buf.getvalue()


def read_csv(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        records = []
        for row in reader:
            v = dict(zip(CSV_COLUMNS, row))
            records.append(TraceRecord(
                round=int(v["round"]),
                train_loss=float(v["train_loss"]),
                grad_norm=float(v["grad_norm"]),
                val_accuracy=float(v["val_accuracy"]) if v["val_accuracy"] else None,
                eta=float(v["eta"]),
                comm_rounds=int(v["comm_rounds"]),
                wall_ms=float(v["wall_ms"]),
                status=v["status"],
                run_id=v["run_id"],
                repeat=int(v["repeat"]),
            ))
    return records


def strip_wall(csv_text: str) -> str:
    """Zero the wall-clock column so traces can be compared byte-for-byte."""
    lines = csv_text.splitlines(keepends=True)
    col = CSV_COLUMNS.index("wall_ms")
    out = [lines[0]]
    for line in lines[1:]:
        cells = line.rstrip("\n").split(",")
        cells[col] = "0.0"
        out.append(",".join(cells) + "\n")
    return "".join(out)


__all__ = [
    "CSV_COLUMNS", "CSV_VERSION", "TraceRecord", "diverged_marker", "format_csv",
    "read_csv", "strip_wall",
]
