"""Tabular container shared by the XPORT and CSV ingestion paths."""
from __future__ import annotations

from dataclasses import dataclass, field

import pandas as pd

NUMERIC = "numeric"
TEXT = "text"


@dataclass(frozen=True)
class Column:
    """A named column with a declared kind (``numeric`` or ``text``)."""

    name: str
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, TEXT):
            raise ValueError(f"unknown column kind {self.kind!r}")


@dataclass
class RawTable:
    """One source dataset: column metadata plus row tuples.

    Rows are value tuples aligned with ``columns``; numeric cells are floats
    or ``None`` (missing), text cells are strings (empty string when blank).
    ``cycle`` identifies the survey period the table came from, e.g.
    ``"2011-2012"``; it may be empty until the caller assigns it.
    """

    name: str
    columns: list[Column]
    rows: list[tuple] = field(default_factory=list)
    cycle: str = ""

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in table {self.name!r}")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(
                    f"table {self.name!r} row {i} has {len(row)} values, expected {width}"
                )

    @property
    def variable_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise KeyError(f"no column {name!r} in table {self.name!r}")

    def column_values(self, name: str) -> list:
        idx = self.column_index(name)
        return [row[idx] for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        """Return the table as a DataFrame (missing numerics become NaN)."""
        frame = pd.DataFrame(self.rows, columns=self.variable_names)
        for col in self.columns:
            if col.kind == NUMERIC:
                frame[col.name] = pd.to_numeric(frame[col.name])
        return frame
