"""Machine-readable result tables with CSV and JSON emission.

CSV layout: '#'-prefixed metadata line (JSON object), then a header row and
one record per row; UTF-8, LF line endings, '.' decimal separator, floats
rendered with 17 significant digits so parsing reproduces them exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import ConfigError


def _render(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


@dataclass
class ResultTable:
    """Named, typed columns plus metadata sufficient to re-run the experiment."""

    columns: list[str]
    rows: list[list] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, record: dict) -> None:
        missing = set(self.columns) - set(record)
        if missing:
            raise ConfigError(f"record missing columns: {sorted(missing)}")
        self.rows.append([record[c] for c in self.columns])

    def column(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def to_tree(self) -> dict:
        return {
            "metadata": self.metadata,
            "columns": list(self.columns),
            "rows": [[_coerce_json(v) for v in row] for row in self.rows],
        }


def _coerce_json(value):
    try:
        import numpy as np

        if isinstance(value, np.generic):
            return value.item()
    except ImportError:  # pragma: no cover
        pass
    return value


def emit_csv(table: ResultTable, path: str | Path) -> None:
    """Write the table as CSV with an embedded metadata comment line."""
    lines = ["# " + json.dumps(table.metadata, sort_keys=True, default=_coerce_json)]
    lines.append(",".join(table.columns))
    for row in table.rows:
        lines.append(",".join(_render(v) for v in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def emit_json(table: ResultTable, path: str | Path) -> None:
    """Write the table as a JSON tree mirroring the CSV columns."""
    try:
        Path(path).write_text(
            json.dumps(table.to_tree(), indent=2, default=_coerce_json) + "\n",
            encoding="utf-8",
            newline="\n",
        )
    except OSError as exc:
        raise OSError(f"cannot write JSON to {path}: {exc}") from exc


def parse_csv(path: str | Path) -> ResultTable:
    """Read a CSV produced by emit_csv, restoring floats to full precision."""
    text = Path(path).read_text(encoding="utf-8")
    metadata: dict = {}
    header: list[str] | None = None
    rows: list[list] = []
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith("#"):
            metadata = json.loads(line[1:].strip() or "{}")
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            continue
        rows.append([_parse_cell(c) for c in cells])
    if header is None:
        raise ConfigError(f"{path}: no header row")
    return ResultTable(columns=header, rows=rows, metadata=metadata)


def _parse_cell(cell: str):
    if cell == "":
        return ""
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell
