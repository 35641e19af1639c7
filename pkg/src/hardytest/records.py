"""Trial records, event-count tables and their on-disk formats.

Record files are CSV with header ``x,y,a,b``; settings are 1 or 2 and
outcomes are encoded 0, 1, 2 with 2 = u. Counts files are JSON objects
``{"total": N, "counts": {"x,y,a,b": n, ...}}`` in the same encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .distributions import JointDistribution
from .errors import DataFormatError, DomainError, InsufficientDataError, ValidationError

RECORD_COLUMNS = ("x", "y", "a", "b")


@dataclass(frozen=True)
class TrialRecord:
    """Settings and outcomes of a single trial."""

    x: int
    y: int
    a: int
    b: int

    def __post_init__(self):
        if self.x not in (1, 2) or self.y not in (1, 2):
            raise DomainError(f"settings must be 1 or 2, got {(self.x, self.y)!r}")
        if self.a not in (0, 1, 2) or self.b not in (0, 1, 2):
            raise DomainError(f"outcomes must be 0, 1 or 2, got {(self.a, self.b)!r}")


@dataclass(frozen=True)
class CountsTable:
    """Event counts n(a, b, x, y) plus the total number of trials."""

    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(2, 2, 3, 3)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(self.total))
        if counts.min() < 0:
            raise ValidationError("negative count")
        if int(counts.sum()) != self.total:
            raise ValidationError(
                f"counts sum to {int(counts.sum())}, declared total is {self.total}"
            )

    @classmethod
    def empty(cls) -> "CountsTable":
        return cls(np.zeros((2, 2, 3, 3), dtype=np.int64), 0)

    @classmethod
    def from_records(cls, records) -> "CountsTable":
        """Count an (N, 4) array of rows (x, y, a, b) or TrialRecord list."""
        arr = records_as_array(records)
        code = (
            (arr[:, 0].astype(np.int64) - 1) * 18
            + (arr[:, 1] - 1) * 9 + arr[:, 2] * 3 + arr[:, 3]
        )
        counts = np.bincount(code, minlength=36).reshape(2, 2, 3, 3)
        return cls(counts.astype(np.int64), arr.shape[0])

    def merge(self, other: "CountsTable") -> "CountsTable":
        return CountsTable(self.counts + other.counts, self.total + other.total)

    def setting_totals(self) -> np.ndarray:
        """n(x, y), shape (2, 2)."""
        return self.counts.sum(axis=(2, 3))

    def count(self, x: int, y: int, a, b) -> int:
        from .distributions import outcome_index

        return int(self.counts[x - 1, y - 1, outcome_index(a), outcome_index(b)])

    def frequencies(self, setting_weights=None) -> JointDistribution:
        """Empirical conditional distribution f(ab|xy).

        Setting weights default to the empirical n(xy)/N. Raises
        InsufficientDataError when any setting pair has no trials.
        """
        totals = self.setting_totals()
        if totals.min() == 0:
            raise InsufficientDataError(
                "every setting pair needs at least one trial to form frequencies"
            )
        cond = self.counts / totals[:, :, None, None]
        if setting_weights is None:
            setting_weights = totals / self.total
        return JointDistribution(cond, setting_weights)

    def to_json_dict(self) -> dict:
        cells = {}
        for x in (1, 2):
            for y in (1, 2):
                for a in range(3):
                    for b in range(3):
                        cells[f"{x},{y},{a},{b}"] = int(self.counts[x - 1, y - 1, a, b])
        return {"total": self.total, "counts": cells}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "CountsTable":
        try:
            total = int(payload["total"])
            raw = payload["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"counts file missing or invalid field: {exc}") from exc
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        for key, value in raw.items():
            try:
                x, y, a, b = (int(part) for part in key.split(","))
            except ValueError as exc:
                raise DataFormatError(f"invalid counts key {key!r}") from exc
            if not (x in (1, 2) and y in (1, 2) and 0 <= a <= 2 and 0 <= b <= 2):
                raise DataFormatError(f"counts key out of range: {key!r}")
            counts[x - 1, y - 1, a, b] = int(value)
        return cls(counts, total)


def records_as_array(records) -> np.ndarray:
    """Normalize records input to an (N, 4) integer array and validate it.

    Integer input arrays keep their dtype (large record streams are held
    as int8), everything else is converted to int64.
    """
    if isinstance(records, np.ndarray) and np.issubdtype(records.dtype, np.integer):
        arr = records.reshape(-1, 4)
    elif isinstance(records, np.ndarray):
        arr = records.astype(np.int64).reshape(-1, 4)
    else:
        rows = [
            (r.x, r.y, r.a, r.b) if isinstance(r, TrialRecord) else tuple(r)
            for r in records
        ]
        arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    _validate_record_array(arr)
    return arr


def _validate_record_array(arr: np.ndarray, line_offset: int = 0) -> None:
    bad_setting = (arr[:, :2] < 1) | (arr[:, :2] > 2)
    bad_outcome = (arr[:, 2:] < 0) | (arr[:, 2:] > 2)
    bad = bad_setting.any(axis=1) | bad_outcome.any(axis=1)
    if bad.any():
        first = int(np.argmax(bad))
        raise DataFormatError(
            f"record {tuple(arr[first])} out of range", line_number=line_offset + first
        )


def write_records_csv(path, records) -> None:
    """Write trial records as CSV with header x,y,a,b."""
    arr = records_as_array(records)
    frame = pd.DataFrame(arr, columns=list(RECORD_COLUMNS))
    frame.to_csv(path, index=False)


def read_records_csv(path) -> np.ndarray:
    """Read a record CSV into an (N, 4) int64 array.

    Malformed lines raise DataFormatError carrying the 1-based physical
    line number (the header is line 1).
    """
    try:
        frame = pd.read_csv(path, dtype=np.int64)
    except (ValueError, pd.errors.ParserError):
        _raise_with_line_number(path)
        raise  # unreachable; keeps type checkers happy
    if list(frame.columns) != list(RECORD_COLUMNS):
        raise DataFormatError(
            f"record file must have header x,y,a,b, got {list(frame.columns)!r}",
            line_number=1,
        )
    arr = frame.to_numpy(dtype=np.int64).reshape(-1, 4)
    # +2: one for the header line, one for 1-based numbering
    _validate_record_array(arr, line_offset=2)
    return arr


def _raise_with_line_number(path) -> None:
    """Slow path: locate the first malformed CSV line for the error report."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if lineno == 1:
                continue
            parts = line.strip().split(",")
            if len(parts) != 4 or not all(
                p.strip().lstrip("+-").isdigit() for p in parts
            ):
                raise DataFormatError(
                    f"malformed record line: {line.strip()!r}", line_number=lineno
                )
    raise DataFormatError("record file could not be parsed", line_number=0)


def write_counts_json(path, table: CountsTable) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(table.to_json_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_counts_json(path) -> CountsTable:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(
                f"counts file is not valid JSON: {exc}", line_number=exc.lineno
            ) from exc
    return CountsTable.from_json_dict(payload)
