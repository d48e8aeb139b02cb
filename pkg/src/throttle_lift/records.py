"""Observed auction records, stored column-wise.

A campaign produces tens of thousands of rows and every estimator reduces
them with grouped sums, so the canonical container is :class:`Records`, a
bundle of aligned numpy arrays. :class:`AuctionRecord` is the row view.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ParseError, SchemaMismatch

RECORD_COLUMNS = ("unit_id", "interval", "p", "Z", "D", "Y", "E", "competitor_bid")


class AuctionRecord(NamedTuple):
    unit_id: int
    interval_index: int
    participation_prob: float
    participated: int
    exposed: int
    outcome: float
    expenditure: float
    pretreatment: dict
    weight: float = 1.0


def _col(values, dtype) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=dtype))


@dataclass(frozen=True)
class Records:
    """Aligned columns ``(unit_id, interval, p, z, d, y, e, competitor_bid, weight)``.

    ``z`` is the participation indicator, ``d`` exposure (won auction),
    ``y`` the outcome, ``e`` the expenditure. ``weight`` defaults to ones.
    """

    unit_id: np.ndarray
    interval: np.ndarray
    p: np.ndarray
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    e: np.ndarray
    competitor_bid: np.ndarray
    weight: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.unit_id)
        object.__setattr__(self, "unit_id", _col(self.unit_id, np.int64))
        object.__setattr__(self, "interval", _col(self.interval, np.int64))
        object.__setattr__(self, "p", _col(self.p, np.float64))
        object.__setattr__(self, "z", _col(self.z, np.int8))
        object.__setattr__(self, "d", _col(self.d, np.int8))
        object.__setattr__(self, "y", _col(self.y, np.float64))
        object.__setattr__(self, "e", _col(self.e, np.float64))
        object.__setattr__(self, "competitor_bid", _col(self.competitor_bid, np.float64))
        w = np.ones(n) if self.weight is None else self.weight
        object.__setattr__(self, "weight", _col(w, np.float64))
        for name in ("interval", "p", "z", "d", "y", "e", "competitor_bid", "weight"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.unit_id)

    @classmethod
    def empty(cls) -> "Records":
        return cls(*([np.empty(0)] * 8))

    @classmethod
    def from_rows(cls, rows) -> "Records":
        rows = list(rows)
        if not rows:
            return cls.empty()
        return cls(
            unit_id=[r.unit_id for r in rows],
            interval=[r.interval_index for r in rows],
            p=[r.participation_prob for r in rows],
            z=[r.participated for r in rows],
            d=[r.exposed for r in rows],
            y=[r.outcome for r in rows],
            e=[r.expenditure for r in rows],
            competitor_bid=[r.pretreatment.get("competitor_bid", math.nan) for r in rows],
            weight=[r.weight for r in rows],
        )

    def take(self, index) -> "Records":
        """Row subset (boolean mask or integer index, repeats allowed)."""
        return Records(
            self.unit_id[index], self.interval[index], self.p[index], self.z[index],
            self.d[index], self.y[index], self.e[index], self.competitor_bid[index],
            self.weight[index],
        )

    def rows(self) -> Iterator[AuctionRecord]:
        for i in range(len(self)):
            yield AuctionRecord(
                int(self.unit_id[i]), int(self.interval[i]), float(self.p[i]),
                int(self.z[i]), int(self.d[i]), float(self.y[i]), float(self.e[i]),
                {"competitor_bid": float(self.competitor_bid[i])}, float(self.weight[i]),
            )

    @property
    def is_weighted(self) -> bool:
        return bool(np.any(self.weight != 1.0))

    def validate(self) -> None:
        """Raise ``ValueError`` if one-sided compliance or overlap is violated."""
        if np.any((self.z == 0) & (self.d != 0)):
            raise ValueError("exposed without participating")
        if np.any((self.z == 0) & (self.e != 0)):
            raise ValueError("expenditure without participating")
        if np.any((self.p <= 0) | (self.p >= 1)):
            raise ValueError("participation probability outside (0, 1)")
        if np.any(self.weight < 0):
            raise ValueError("negative weight")


def concat(parts) -> Records:
    parts = list(parts)
    if not parts:
        return Records.empty()
    names = ("unit_id", "interval", "p", "z", "d", "y", "e", "competitor_bid", "weight")
    return Records(*(np.concatenate([getattr(r, n) for r in parts]) for n in names))


# ---------------------------------------------------------------------------
# CSV encoding

def fmt_num(x) -> str:
    """Decimal text; integral values without a fraction, others round-trip exact."""
    x = float(x)
    if math.isnan(x):
        return ""
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def records_to_csv(records: Records, with_weight: bool | None = None) -> str:
    if with_weight is None:
        with_weight = records.is_weighted
    header = list(RECORD_COLUMNS) + (["weight"] if with_weight else [])
    cols = [records.unit_id, records.interval, records.p, records.z, records.d,
            records.y, records.e, records.competitor_bid]
    if with_weight:
        cols.append(records.weight)
    rows = ([fmt_num(v) for v in row] for row in zip(*(c.tolist() for c in cols)))
    return rows_to_csv(header, rows)


def write_records(records: Records, path, with_weight: bool | None = None) -> None:
    atomic_write_text(path, records_to_csv(records, with_weight))


def _parse_float(text: str, line: int, name: str, allow_blank=False) -> float:
    text = text.strip()
    if text == "":
        if allow_blank:
            return math.nan
        raise ParseError(line, f"missing value for {name!r}")
    try:
        return float(text)
    except ValueError:
        raise ParseError(line, f"{name}={text!r} is not a number") from None


def _parse_binary(text: str, line: int, name: str) -> int:
    text = text.strip()
    if text not in ("0", "1"):
        raise ParseError(line, f"{name}={text!r} is not 0/1")
    return int(text)


def read_records(path) -> Records:
    """Parse a records CSV (optionally with a ``weight`` column)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        missing = [c for c in RECORD_COLUMNS if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        pos = {c: header.index(c) for c in header}
        has_w = "weight" in pos
        cols: dict[str, list] = {c: [] for c in RECORD_COLUMNS + ("weight",)}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(line, f"expected {len(header)} fields, got {len(row)}")
            get = lambda c: row[pos[c]]  # noqa: E731
            uid = _parse_float(get("unit_id"), line, "unit_id")
            interval = _parse_float(get("interval"), line, "interval")
            p = _parse_float(get("p"), line, "p")
            z = _parse_binary(get("Z"), line, "Z")
            d = _parse_binary(get("D"), line, "D")
            y = _parse_float(get("Y"), line, "Y")
            e = _parse_float(get("E"), line, "E", allow_blank=True)
            cb = _parse_float(get("competitor_bid"), line, "competitor_bid", allow_blank=True)
            w = _parse_float(get("weight"), line, "weight") if has_w else 1.0
            if not 0.0 < p < 1.0:
                raise ParseError(line, f"p={p} outside (0, 1)")
            if z == 0 and d == 1:
                raise ParseError(line, "D=1 with Z=0 violates one-sided compliance")
            if z == 0 and e not in (0.0,) and not math.isnan(e):
                raise ParseError(line, "nonzero expenditure with Z=0")
            if w < 0:
                raise ParseError(line, "negative weight")
            for name, v in (("unit_id", uid), ("interval", interval), ("p", p), ("Z", z),
                            ("D", d), ("Y", y), ("E", e), ("competitor_bid", cb), ("weight", w)):
                cols[name].append(v)
    return Records(cols["unit_id"], cols["interval"], cols["p"], cols["Z"], cols["D"],
                   cols["Y"], cols["E"], cols["competitor_bid"], cols["weight"])
