"""Capture records, stratification by covariate vector, and CSV I/O.

Capture configurations are indexed lexicographically with the first list as
the most significant bit, so row ``r`` of the history matrix is the J-bit
binary expansion of ``r`` and index 0 is the never-captured history.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_LISTS = 20


class DataError(ValueError):
    """Raised for malformed capture data."""


@dataclass(frozen=True)
class CaptureRecord:
    history: tuple[int, ...]
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.history) < 2:
            raise DataError("a capture history needs at least two lists")
        if any(h not in (0, 1) for h in self.history):
            raise DataError(f"history {self.history} is not binary")
        if not any(self.history):
            raise DataError("all-zero history: unit was never captured")


@dataclass(frozen=True)
class Stratum:
    """Captured units sharing one covariate vector.

    ``y`` holds counts for configurations 1..2^J-1 (the h = 0 cell dropped).
    """

    x: np.ndarray
    n: int
    y: np.ndarray


@dataclass(frozen=True)
class Dataset:
    strata: tuple[Stratum, ...]
    J: int
    covariate_names: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return int(sum(st.n for st in self.strata))

    @property
    def s(self) -> int:
        return len(self.strata)

    @property
    def k(self) -> int:
        return 2**self.J

    @property
    def counts(self) -> np.ndarray:
        """Stratum sizes n_i as a float vector."""
        return np.array([st.n for st in self.strata], dtype=float)

    @property
    def Y(self) -> np.ndarray:
        """(s, k-1) matrix of configuration counts."""
        return np.vstack([st.y for st in self.strata]).astype(float)

    @property
    def X(self) -> np.ndarray:
        """(s, p) matrix of stratum covariate vectors."""
        if not self.strata:
            return np.zeros((0, len(self.covariate_names)))
        return np.vstack([np.atleast_1d(st.x) for st in self.strata]).astype(float)

    def covariate(self, name: str) -> np.ndarray:
        try:
            col = self.covariate_names.index(name)
        except ValueError:
            raise KeyError(f"unknown covariate {name!r}; have {list(self.covariate_names)}") from None
        return self.X[:, col]


def encode_history(bits: Sequence[int], J: int | None = None) -> int:
    """Lexicographic index of a capture history (h_1 most significant).

    >>> encode_history((1, 0, 1))
    5
    """
    if J is not None and len(bits) != J:
        raise DataError(f"history has length {len(bits)}, expected {J}")
    index = 0
    for b in bits:
        if b not in (0, 1):
            raise DataError(f"history element {b!r} is not 0/1")
        index = (index << 1) | int(b)
    return index


def decode_history(index: int, J: int) -> tuple[int, ...]:
    if not 0 <= index < 2**J:
        raise DataError(f"index {index} out of range for J={J}")
    return tuple((index >> (J - 1 - j)) & 1 for j in range(J))


def stratify(records: Iterable[CaptureRecord], covariate_names: Sequence[str] = ()) -> Dataset:
    """Group records with identical covariate vectors into strata.

    Strata appear in first-appearance order of their covariate vector.
    """
    records = list(records)
    if not records:
        raise DataError("no observable units: empty record list")
    J = len(records[0].history)
    if J > MAX_LISTS:
        raise DataError(f"J={J} exceeds the supported maximum of {MAX_LISTS}")
    p = len(records[0].covariates)
    k = 2**J
    order: dict[tuple[float, ...], int] = {}
    ys: list[np.ndarray] = []
    for row, rec in enumerate(records):
        if len(rec.history) != J or len(rec.covariates) != p:
            raise DataError(f"record {row} does not match the shape of record 0")
        key = tuple(float(v) for v in rec.covariates)
        if key not in order:
            order[key] = len(order)
            ys.append(np.zeros(k - 1, dtype=np.int64))
        ys[order[key]][encode_history(rec.history) - 1] += 1
    names = tuple(covariate_names) if covariate_names else tuple(f"x{i + 1}" for i in range(p))
    strata = tuple(
        Stratum(x=np.array(key, dtype=float), n=int(y.sum()), y=y)
        for key, y in zip(order, ys)
    )
    return Dataset(strata=strata, J=J, covariate_names=names)


def parse_capture_csv(path: str | Path, n_lists: int) -> tuple[list[CaptureRecord], list[str]]:
    """Read a capture CSV: header row, J binary columns, then numeric covariates.

    Returns the records in file order and the covariate column names. Row
    numbers in error messages count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < n_lists:
            raise DataError(f"{path}: header has {len(header)} columns, need at least {n_lists}")
        records = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, header has {len(header)}")
            hist = []
            for col, cell in enumerate(row[:n_lists]):
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise DataError(f"{path}: row {row_no}, column {header[col]!r}: capture cell {cell!r} is not 0/1")
                hist.append(int(cell))
            cov = []
            for col, cell in enumerate(row[n_lists:], start=n_lists):
                cell = cell.strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {row_no}, column {header[col]!r}: value {cell!r} is not numeric") from None
                if not math.isfinite(value):
                    raise DataError(f"{path}: row {row_no}, column {header[col]!r}: missing or non-finite value")
                cov.append(value)
            if not any(hist):
                raise DataError(f"{path}: row {row_no}: all-zero capture history")
            records.append(CaptureRecord(tuple(hist), tuple(cov)))
    return records, header[n_lists:]


def load_dataset(path: str | Path, n_lists: int) -> Dataset:
    records, names = parse_capture_csv(path, n_lists)
    return stratify(records, names)


def write_capture_csv(dataset: Dataset, path: str | Path) -> None:
    """Expand strata back into one row per captured unit."""
    J = dataset.J
    header = [f"h{j + 1}" for j in range(J)] + list(dataset.covariate_names)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for st in dataset.strata:
            for idx, count in enumerate(st.y, start=1):
                for _ in range(int(count)):
                    w.writerow(list(decode_history(idx, J)) + [_fmt(v) for v in np.atleast_1d(st.x)])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
