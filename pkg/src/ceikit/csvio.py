"""Deterministic CSV helpers.

All pipeline outputs are written through these functions so that two
runs with identical inputs produce byte-identical files: fixed column
order, fixed row order (callers pass sorted rows), floats via ``repr``
(shortest round-trip form), dates as ISO-8601, and LF line endings.
"""

from __future__ import annotations

import csv
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence


def fmt(value) -> str:
    """Render a cell deterministically."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
