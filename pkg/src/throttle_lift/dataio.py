"""Ingest platform auction logs and rebuild the throttled-out controls.

Platforms typically log every auction the campaign entered but only a
sample of those it skipped, and do not say why an auction was skipped
(throttling or failed targeting). An auction counts as a throttled-out
control when another auction in the same hour had exactly the same top
competitors and competitor bids and the campaign did participate there.
The matched controls are then reweighted so that, within each hour and
probability cell, they stand in for the ``n1 * (1 - p) / p`` non-participations
the throttle must have produced.

If the log has a ``throttled_out`` column the matching step is skipped.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InconsistentProbability, NoControls, ParseError, SchemaMismatch
from .records import Records, atomic_write_text, fmt_num, rows_to_csv

log = logging.getLogger(__name__)

LOG_COLUMNS = ("auction_id", "timestamp", "hour", "participated", "p", "exposed", "outcome",
               "competitor_ids", "competitor_bids")
OPTIONAL_COLUMNS = ("focal_bid", "throttled_out")
MAX_COMPETITORS = 20
P_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LoggedAuction:
    auction_id: str
    timestamp: float
    hour_bucket: int
    participated: int
    participation_prob: Optional[float]
    exposed: int
    outcome: float
    competitor_ids: tuple[str, ...]
    competitor_bids: tuple[float, ...]
    focal_bid: Optional[float] = None
    throttled_out: Optional[int] = None

    @property
    def key(self) -> tuple:
        """Matching key with competitors sorted by id (bids permuted along)."""
        pairs = sorted(zip(self.competitor_ids, self.competitor_bids))
        return (self.hour_bucket, tuple(i for i, _ in pairs), tuple(b for _, b in pairs))


@dataclass
class MatchedSet:
    key: tuple
    p: float
    treated: list[LoggedAuction]
    controls: list[LoggedAuction]
    control_weight: list[float] = field(default_factory=list)
    controls_logged: bool = False


def _binary(text, line, name):
    text = text.strip()
    if text not in ("0", "1"):
        raise ParseError(line, f"{name}={text!r} is not 0/1")
    return int(text)


def _number(text, line, name, optional=False):
    text = text.strip()
    if text == "":
        if optional:
            return None
        raise ParseError(line, f"missing {name}")
    try:
        return float(text)
    except ValueError:
        raise ParseError(line, f"{name}={text!r} is not a number") from None


def parse_log(path, delimiter: str = "|") -> list[LoggedAuction]:
    """Read a logged-auction CSV; list subfields are ``delimiter``-separated."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        missing = [c for c in LOG_COLUMNS if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        pos = {c: i for i, c in enumerate(header)}
        for line, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise ParseError(line, f"expected {len(header)} fields, got {len(raw)}")
            get = lambda c: raw[pos[c]] if c in pos else ""  # noqa: E731
            participated = _binary(get("participated"), line, "participated")
            exposed = _binary(get("exposed"), line, "exposed")
            if participated == 0 and exposed == 1:
                raise ParseError(line, "exposed=1 with participated=0 violates one-sided compliance")
            p = _number(get("p"), line, "p", optional=True)
            if p is not None and not 0 < p < 1:
                raise ParseError(line, f"p={p} outside (0, 1)")
            if participated and p is None:
                raise ParseError(line, "participated row without p")
            ids = tuple(s.strip() for s in get("competitor_ids").split(delimiter) if s.strip())
            bid_text = [s for s in get("competitor_bids").split(delimiter) if s.strip()]
            bids = tuple(_number(s, line, "competitor_bids") for s in bid_text)
            if len(ids) != len(bids):
                raise ParseError(line, f"{len(ids)} competitor ids but {len(bids)} bids")
            if len(ids) > MAX_COMPETITORS:
                raise ParseError(line, f"more than {MAX_COMPETITORS} competitors")
            throttled = get("throttled_out").strip()
            rows.append(LoggedAuction(
                auction_id=get("auction_id").strip(),
                timestamp=_number(get("timestamp"), line, "timestamp"),
                hour_bucket=int(_number(get("hour"), line, "hour")),
                participated=participated,
                participation_prob=p,
                exposed=exposed,
                outcome=_number(get("outcome"), line, "outcome"),
                competitor_ids=ids,
                competitor_bids=bids,
                focal_bid=_number(get("focal_bid"), line, "focal_bid", optional=True),
                throttled_out=_binary(throttled, line, "throttled_out") if throttled else None,
            ))
    return rows


def _set_probability(key, treated: list[LoggedAuction]) -> float:
    ps = [r.participation_prob for r in treated]
    if max(ps) - min(ps) > P_TOLERANCE:
        raise InconsistentProbability(key)
    return ps[0]


def impute_throttled_controls(rows: list[LoggedAuction]) -> list[MatchedSet]:
    """Group rows by exact competitor key; keep keys with at least one participation.

    Non-participated rows under keys nobody participated in are discarded:
    the campaign may not have been eligible there at all.
    """
    if any(r.throttled_out is not None for r in rows):
        return _logged_controls(rows)
    groups: dict[tuple, list[LoggedAuction]] = defaultdict(list)
    for r in rows:
        groups[r.key].append(r)
    out = []
    for key in sorted(groups):
        members = groups[key]
        treated = [r for r in members if r.participated]
        if not treated:
            continue
        controls = [r for r in members if not r.participated]
        out.append(MatchedSet(key, _set_probability(key, treated), treated, controls))
    return out


def _logged_controls(rows: list[LoggedAuction]) -> list[MatchedSet]:
    # throttled-out rows are known controls; no competitor matching needed
    groups: dict[tuple, MatchedSet] = {}
    for r in rows:
        if not (r.participated or r.throttled_out == 1):
            continue
        if r.participation_prob is None:
            log.warning("auction %s: throttled-out row without p, skipped", r.auction_id)
            continue
        key = (r.hour_bucket, r.participation_prob)
        s = groups.setdefault(key, MatchedSet(key, r.participation_prob, [], [], controls_logged=True))
        (s.treated if r.participated else s.controls).append(r)
    return [groups[k] for k in sorted(groups) if groups[k].treated]


def _cells(sets: list[MatchedSet]) -> dict[tuple, list[MatchedSet]]:
    cells: dict[tuple, list[MatchedSet]] = defaultdict(list)
    for s in sets:
        cells[(s.key[0], s.p)].append(s)
    return cells


def assign_control_weights(sets: list[MatchedSet], strict: bool = False) -> list[MatchedSet]:
    """Copies of ``sets`` with ``control_weight`` filled in.

    Within each (hour, p) cell the ``m`` matched controls share the
    ``n1 (1 - p) / p`` non-participations implied by the cell's ``n1``
    participations, ``n1 (1 - p) / (p m)`` each. Directly logged controls
    weigh 1. Cells without controls are dropped with a warning, or raise
    :class:`NoControls` when ``strict``.
    """
    out = []
    for (hour, p), group in sorted(_cells(sets).items()):
        n1 = sum(len(s.treated) for s in group)
        m = sum(len(s.controls) for s in group)
        if m == 0:
            if strict:
                raise NoControls((hour, p))
            log.warning("dropping hour %s (p=%s): no matched controls", hour, p)
            continue
        for s in group:
            share = 1.0 if s.controls_logged else n1 * (1.0 - p) / p / m
            out.append(replace(s, control_weight=[share] * len(s.controls)))
    return out


def reweight_controls(sets: list[MatchedSet], strict: bool = False) -> Records:
    """Weighted records for the estimators: treated rows weigh 1, controls per cell share."""
    cols: dict[str, list] = defaultdict(list)
    for s in assign_control_weights(sets, strict=strict):
        for r, weight in [(r, 1.0) for r in s.treated] + list(zip(s.controls, s.control_weight)):
            cols["interval"].append(s.key[0])
            cols["p"].append(s.p)
            cols["z"].append(r.participated)
            cols["d"].append(r.exposed)
            cols["y"].append(r.outcome)
            cols["w"].append(weight)
            cols["cb"].append(max(r.competitor_bids) if r.competitor_bids else math.nan)
    n = len(cols["p"])
    return Records(np.arange(n), cols["interval"], cols["p"], cols["z"], cols["d"], cols["y"],
                   np.full(n, math.nan), cols["cb"], cols["w"])


def ingest(path, strict: bool = False) -> Records:
    return reweight_controls(impute_throttled_controls(parse_log(path)), strict=strict)


def run_to_log_csv(run, bid_resolution: float = 1.0, hide_labels: bool = True, n_competitors: int = 3) -> str:
    """Render a simulated campaign as a platform log.

    Every unit becomes one logged auction with a synthetic competitor key:
    a type-specific competitor roster whose top bid is the unit's highest
    competing bid floored to ``bid_resolution``. With ``hide_labels`` the
    non-participated rows lose their probability and there is no
    ``throttled_out`` column, as in real logs.
    """
    rec, pot = run.records, run.potentials
    header = list(LOG_COLUMNS) + ([] if hide_labels else ["throttled_out"])
    rows = []
    for i in range(len(rec)):
        high = bool(pot.is_high[i])
        roster = [f"{'h' if high else 'l'}{k:02d}" for k in range(n_competitors)]
        top = math.floor(rec.competitor_bid[i] / bid_resolution) * bid_resolution
        bids = [top] + [round(top * 0.5 ** (k + 1), 6) for k in range(1, n_competitors)]
        participated = int(rec.z[i])
        row = [
            str(int(rec.unit_id[i])), fmt_num(float(pot.arrival_time[i]) * 60.0), str(int(rec.interval[i])),
            str(participated),
            fmt_num(rec.p[i]) if (participated or not hide_labels) else "",
            str(int(rec.d[i])), fmt_num(rec.y[i]),
            "|".join(roster), "|".join(fmt_num(b) for b in bids),
        ]
        if not hide_labels:
            row.append("0" if participated else "1")
        rows.append(row)
    return rows_to_csv(header, rows)


def write_log(run, path, **kwargs) -> None:
    atomic_write_text(path, run_to_log_csv(run, **kwargs))
