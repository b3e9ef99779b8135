"""Metrics and action-log files.

Metrics are CSV with a version line, then a header, then one row per scheduler
tick. Columns are fixed for a given run: per-node cpu and memory utilization,
three deployment slots (agents and usage), windowed delay means, deadline
status, migration and fallback counts for the interval, the minimum pairwise
xy distance between co-deployment agents, and one tracking-error column per
agent the scenario can ever spawn. Empty cells mean "not applicable at this
tick" (agent not flying, no samples yet).

Floats are written with repr, so files are byte-stable for identical runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

METRICS_HEADER = "# cloudmpc-metrics v1"
ACTIONS_HEADER = "# cloudmpc-actions v1"
DEPLOYMENT_SLOTS = 3


class MetricsError(ValueError):
    pass


def metrics_columns(node_names: list[str], agent_count: int) -> list[str]:
    cols = ["time"]
    for n in node_names:
        cols.append(f"util_cpu_{n}")
    for n in node_names:
        cols.append(f"util_mem_{n}")
    cols.append("deployments_active")
    for k in range(DEPLOYMENT_SLOTS):
        cols.append(f"dep{k}_agents")
        cols.append(f"dep{k}_usage")
    cols += ["tau_u_mean", "tau_d_mean", "tau_p_mean", "tau_rrt_mean", "deadline_ok"]
    cols += ["migrations", "fallbacks", "min_codep_dist"]
    for a in range(agent_count):
        cols.append(f"err_agent_{a}")
    return cols


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    def __init__(self, columns: list[str]):
        self.columns = columns
        self.lines = [METRICS_HEADER, ",".join(columns)]

    def add_row(self, row: dict) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise MetricsError(f"unknown metrics columns {sorted(unknown)}")
        self.lines.append(",".join(_format_cell(row.get(c)) for c in self.columns))

    def dump(self) -> str:
        return "\n".join(self.lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dump())


@dataclass
class MetricsTable:
    columns: list[str]
    rows: list[dict]

    def series(self, column: str) -> list:
        if column not in self.columns:
            raise MetricsError(f"no column {column!r}")
        return [r[column] for r in self.rows]


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        return text


def read_metrics(path_or_text) -> MetricsTable:
    """Parses a metrics file; schema violations raise MetricsError."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        text = Path(path_or_text).read_text()
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != METRICS_HEADER:
        raise MetricsError(f"missing schema line {METRICS_HEADER!r}")
    if len(lines) < 2:
        raise MetricsError("missing column header")
    columns = lines[1].split(",")
    rows = []
    for i, line in enumerate(lines[2:], start=3):
        cells = line.split(",")
        if len(cells) != len(columns):
            raise MetricsError(
                f"line {i}: expected {len(columns)} columns, got {len(cells)}"
            )
        rows.append({c: _parse_cell(v) for c, v in zip(columns, cells)})
    return MetricsTable(columns=columns, rows=rows)


class ActionLog:
    def __init__(self):
        self.lines: list[str] = [ACTIONS_HEADER]

    def note(self, t: float, message: str) -> None:
        self.lines.append(f"t={t:.6f} {message}")

    def dump(self) -> str:
        return "\n".join(self.lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dump())
