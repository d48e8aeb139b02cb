"""Throttled second-price campaign simulator.

Customers arrive as a Poisson process; their type (H or L) follows a
two-state Markov chain so that similar customers cluster in time. Each
arrival is an eligible auction. The campaign participates with the
interval's probability, wins when its bid beats the highest competing bid,
pays that competing bid, and the pacing policy resets the probability at
the end of every interval from the logged history alone.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .policy import (
    DEFAULT_LADDER,
    History,
    LadderPolicy,
    PacingState,
    ladder_probability,
    pacing_score,
    validate_ladder,
)
from .records import Records, atomic_write_text, fmt_num, records_to_csv, rows_to_csv

__all__ = [
    "CampaignConfig", "PotentialUnit", "Potentials", "Arrivals", "CampaignRun",
    "generate_arrivals", "run_auction", "run_campaign", "write_run",
    "pacing_score", "ladder_probability", "stay_probabilities",
]


@dataclass(frozen=True)
class CampaignConfig:
    budget: float = 10_000.0
    bid: float = 5.0
    duration_hours: float = 24.0
    interval_minutes: float = 5.0
    arrival_rate_per_day: float = 10_000.0
    type_serial_correlation: float = 0.99
    h_share: float = 0.5
    h_base_rate: float = 0.4
    h_lift: float = 0.4
    l_base_rate: float = 0.1
    l_lift: float = 0.1
    h_competitor_bid_range: tuple[float, float] = (4.0, 7.0)
    l_competitor_bid_range: tuple[float, float] = (1.0, 6.0)
    prob_ladder: tuple[tuple[float, float], ...] = DEFAULT_LADDER
    initial_probability: float = 0.9
    overlap_eta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "h_competitor_bid_range", tuple(map(float, self.h_competitor_bid_range)))
        object.__setattr__(self, "l_competitor_bid_range", tuple(map(float, self.l_competitor_bid_range)))
        object.__setattr__(self, "prob_ladder", tuple((float(t), float(q)) for t, q in self.prob_ladder))
        self.validate()

    def validate(self) -> None:
        for name in ("budget", "bid", "duration_hours", "interval_minutes"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.arrival_rate_per_day < 0:
            raise ValueError("arrival_rate_per_day must be nonnegative")
        if not 0 <= self.type_serial_correlation < 1:
            raise ValueError("type_serial_correlation must lie in [0, 1)")
        if not 0 <= self.h_share <= 1:
            raise ValueError("h_share must lie in [0, 1]")
        for base, lift, tag in ((self.h_base_rate, self.h_lift, "h"), (self.l_base_rate, self.l_lift, "l")):
            if base < 0 or lift < 0 or base + lift > 1:
                raise ValueError(f"{tag}_base_rate + {tag}_lift must lie in [0, 1]")
        for lo, hi in (self.h_competitor_bid_range, self.l_competitor_bid_range):
            if not 0 <= lo <= hi:
                raise ValueError("competitor bid range must satisfy 0 <= low <= high")
        if not 0 < self.overlap_eta < 0.5:
            raise ValueError("overlap_eta must lie in (0, 0.5)")
        validate_ladder(self.prob_ladder)
        eta = self.overlap_eta
        for q in [q for _, q in self.prob_ladder] + [self.initial_probability]:
            if not eta < q < 1 - eta:
                raise ValueError(f"probability {q} violates overlap ({eta}, {1 - eta})")

    @property
    def n_intervals(self) -> int:
        return math.ceil(self.duration_hours * 60.0 / self.interval_minutes)

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["h_competitor_bid_range"] = list(self.h_competitor_bid_range)
        d["l_competitor_bid_range"] = list(self.l_competitor_bid_range)
        d["prob_ladder"] = [list(r) for r in self.prob_ladder]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "CampaignConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class PotentialUnit(NamedTuple):
    unit_id: int
    arrival_time: float
    customer_type: str
    competitor_bid: float
    d1: int
    y0: int
    y1: int
    e1: float


@dataclass(frozen=True)
class Arrivals:
    """Arrival stream: times in minutes, type flags and potential outcomes."""

    time: np.ndarray
    is_high: np.ndarray
    competitor_bid: np.ndarray
    y0: np.ndarray
    y1: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    def __iter__(self):
        for t, h, b, y0, y1 in zip(self.time, self.is_high, self.competitor_bid, self.y0, self.y1):
            yield float(t), "H" if h else "L", float(b), int(y0), int(y1)


@dataclass(frozen=True)
class Potentials:
    unit_id: np.ndarray
    arrival_time: np.ndarray
    is_high: np.ndarray
    competitor_bid: np.ndarray
    d1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    e1: np.ndarray

    def __len__(self) -> int:
        return len(self.unit_id)

    def units(self):
        for i in range(len(self)):
            yield PotentialUnit(
                int(self.unit_id[i]), float(self.arrival_time[i]), "H" if self.is_high[i] else "L",
                float(self.competitor_bid[i]), int(self.d1[i]), int(self.y0[i]), int(self.y1[i]),
                float(self.e1[i]),
            )


@dataclass(frozen=True)
class CampaignRun:
    records: Records
    potentials: Potentials
    probability_path: list[tuple[int, float]]
    pacing_trace: list[PacingState]

    @property
    def skipped(self) -> int:
        return sum(s.skipped for s in self.pacing_trace)


def stay_probabilities(h_share: float, rho: float) -> tuple[float, float]:
    """Per-step stay probabilities (H->H, L->L) of the two-state type chain.

    The chain has stationary H-fraction ``h_share`` and lag-1 autocorrelation
    ``rho``: leaving rates a (H->L) and b (L->H) satisfy b/(a+b) = h_share and
    1 - a - b = rho.
    """
    leave_h = (1.0 - h_share) * (1.0 - rho)
    leave_l = h_share * (1.0 - rho)
    return 1.0 - leave_h, 1.0 - leave_l


def _markov_types(n: int, h_share: float, rho: float, rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=bool)
    if h_share in (0.0, 1.0):
        return np.full(n, h_share == 1.0)
    stay_h, stay_l = stay_probabilities(h_share, rho)
    leave = {True: 1.0 - stay_h, False: 1.0 - stay_l}
    first = bool(rng.random() < h_share)
    # sojourns are geometric, so the chain is a sequence of alternating run lengths
    pairs_needed = int(n / (1.0 / leave[first] + 1.0 / leave[not first])) + 8
    runs, total = [], 0
    while total < n:
        pair = np.column_stack([rng.geometric(leave[first], pairs_needed),
                                rng.geometric(leave[not first], pairs_needed)]).ravel()
        runs.append(pair)
        total += int(pair.sum())
    lengths = np.concatenate(runs)
    states = np.resize(np.array([first, not first]), len(lengths))
    return np.repeat(states, lengths)[:n]


def generate_arrivals(config: CampaignConfig, rng: np.random.Generator) -> Arrivals:
    """Poisson arrivals over the campaign with Markov-chained customer types.

    Outcomes share one uniform draw per unit, ``y0 = u < base`` and
    ``y1 = u < base + lift``, so ``y1 >= y0`` and the purchase rate with ads
    is ``base + lift``.
    """
    horizon = config.duration_hours * 60.0
    n = int(rng.poisson(config.arrival_rate_per_day * config.duration_hours / 24.0))
    time = np.sort(rng.uniform(0.0, horizon, size=n))
    is_high = _markov_types(n, config.h_share, config.type_serial_correlation, rng)
    lo = np.where(is_high, config.h_competitor_bid_range[0], config.l_competitor_bid_range[0])
    hi = np.where(is_high, config.h_competitor_bid_range[1], config.l_competitor_bid_range[1])
    competitor_bid = lo + (hi - lo) * rng.random(n)
    base = np.where(is_high, config.h_base_rate, config.l_base_rate)
    lift = np.where(is_high, config.h_lift, config.l_lift)
    u = rng.random(n)
    y0 = (u < base).astype(np.int8)
    y1 = (u < base + lift).astype(np.int8)
    return Arrivals(time, is_high, competitor_bid, y0, y1)


def run_auction(bid: float, competitor_bid: float) -> tuple[int, float]:
    """Second-price outcome for the focal bidder; exact ties lose."""
    if bid > competitor_bid:
        return 1, competitor_bid
    return 0, 0.0


def run_campaign(config: CampaignConfig, rng: np.random.Generator | None = None, policy=None) -> CampaignRun:
    """Simulate one campaign; deterministic given ``config.seed`` (or ``rng``).

    ``policy`` defaults to the config's ladder policy.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if policy is None:
        policy = LadderPolicy.from_config(config)
    arr = generate_arrivals(config, rng)
    n = len(arr)
    n_intervals = config.n_intervals
    interval = np.minimum((arr.time // config.interval_minutes).astype(np.int64), n_intervals - 1)
    d1 = (config.bid > arr.competitor_bid).astype(np.int8)
    e1 = np.where(d1 == 1, arr.competitor_bid, 0.0)

    p_col = np.empty(n)
    z = np.zeros(n, dtype=np.int8)
    d = np.zeros(n, dtype=np.int8)
    e = np.zeros(n)
    bounds = np.searchsorted(interval, np.arange(n_intervals + 1))

    history = History()
    remaining = float(config.budget)
    p = policy.initial_probability
    path: list[tuple[int, float]] = []
    trace: list[PacingState] = []
    for t in range(n_intervals):
        lo, hi = bounds[t], bounds[t + 1]
        path.append((t, p))
        zt = rng.random(hi - lo) < p
        # budget guard: once remaining < bid every later participant skips
        price = np.where(zt, e1[lo:hi], 0.0)
        before = remaining - (np.cumsum(price) - price)
        runs = zt & (before >= config.bid)
        skipped = int(np.count_nonzero(zt & ~runs))
        et = np.where(runs, e1[lo:hi], 0.0)
        spend = float(et.sum())
        remaining -= spend

        p_col[lo:hi] = p
        z[lo:hi] = zt
        d[lo:hi] = runs & (d1[lo:hi] == 1)
        e[lo:hi] = et

        history.append(t, p, hi - lo, int(np.count_nonzero(zt)), spend)
        state = policy.pacing_state(history) if hasattr(policy, "pacing_state") else None
        trace.append(PacingState(
            interval_index=t,
            remaining_budget=remaining,
            recent_avg_expenditure=state.recent_avg_expenditure if state else math.nan,
            expected_remaining_auctions=state.expected_remaining_auctions if state else math.nan,
            current_probability=p,
            skipped=skipped,
        ))
        p = policy(history)

    y = np.where(d == 1, arr.y1, arr.y0)
    unit_id = np.arange(n, dtype=np.int64)
    records = Records(unit_id, interval, p_col, z, d, y, e, arr.competitor_bid)
    potentials = Potentials(unit_id, arr.time, arr.is_high, arr.competitor_bid, d1, arr.y0, arr.y1, e1)
    return CampaignRun(records, potentials, path, trace)


def potentials_to_csv(pot: Potentials) -> str:
    rows = ([str(u), "H" if h else "L", str(a), str(b), str(c)]
            for u, h, a, b, c in zip(pot.unit_id.tolist(), pot.is_high.tolist(), pot.d1.tolist(),
                                     pot.y0.tolist(), pot.y1.tolist()))
    return rows_to_csv(["unit_id", "type", "d1", "y0", "y1"], rows)


def trace_to_csv(trace: list[PacingState]) -> str:
    rows = ([str(s.interval_index), fmt_num(s.remaining_budget), fmt_num(s.recent_avg_expenditure),
             fmt_num(s.expected_remaining_auctions), fmt_num(s.current_probability), str(s.skipped)]
            for s in trace)
    return rows_to_csv(["interval", "B", "e", "N", "p", "skipped"], rows)


def write_run(run: CampaignRun, out_dir) -> None:
    """Write ``records.csv``, ``potentials.csv`` and ``trace.csv`` into ``out_dir``."""
    out = Path(out_dir)
    atomic_write_text(out / "records.csv", records_to_csv(run.records, with_weight=False))
    atomic_write_text(out / "potentials.csv", potentials_to_csv(run.potentials))
    atomic_write_text(out / "trace.csv", trace_to_csv(run.pacing_trace))
