"""Throttling policies: map the logged history to next interval's participation probability.

A policy is any callable ``policy(history) -> float`` with an
``initial_probability`` attribute. It sees only :class:`History`, the
per-interval aggregates of what the platform logged, never the potential
outcomes of upcoming units. The same policy object drives both the
simulator and the bootstrap, so a bootstrap path is the path the platform
would have produced on the resampled history.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

DEFAULT_LADDER: tuple[tuple[float, float], ...] = ((0.3, 0.3), (0.5, 0.5), (0.7, 0.7), (0.9, 0.9))


@dataclass(frozen=True)
class PacingState:
    interval_index: int
    remaining_budget: float
    recent_avg_expenditure: float
    expected_remaining_auctions: float
    current_probability: float
    skipped: int = 0  # Z=1 units that skipped the auction for lack of budget


@dataclass(frozen=True)
class IntervalSummary:
    interval: int
    p: float
    n: int
    participations: int
    spend: float


@dataclass
class History:
    """Running log of closed intervals, H_t in the pacing recursion."""

    intervals: list[IntervalSummary] = field(default_factory=list)
    total_spend: float = 0.0

    def append(self, interval: int, p: float, n: int, participations: int, spend: float) -> None:
        self.intervals.append(IntervalSummary(interval, p, n, participations, spend))
        self.total_spend += spend

    @property
    def last_interval(self) -> int:
        return self.intervals[-1].interval if self.intervals else -1


class ThrottlePolicy(Protocol):
    initial_probability: float

    def __call__(self, history: History) -> float: ...


def pacing_score(state: PacingState) -> float:
    """Budget-affordable auctions per expected remaining auction.

    Returns ``inf`` once no auctions remain, which lands on the top rung.
    """
    e = state.recent_avg_expenditure
    if not e > 0:
        raise ValueError(f"average expenditure must be positive, got {e}")
    if state.expected_remaining_auctions <= 0:
        return math.inf
    return (state.remaining_budget / e) / state.expected_remaining_auctions


def validate_ladder(ladder: Sequence[tuple[float, float]]) -> None:
    if not ladder:
        raise ValueError("probability ladder is empty")
    thresholds = [t for t, _ in ladder]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("ladder thresholds must be strictly increasing")
    if any(not 0 < q < 1 for _, q in ladder):
        raise ValueError("ladder probabilities must lie in (0, 1)")


def ladder_probability(score: float, ladder: Sequence[tuple[float, float]] = DEFAULT_LADDER) -> float:
    """Step function: probability of the highest rung whose threshold is <= ``score``.

    Each rung covers ``[threshold, next_threshold)``. Scores below the
    lowest threshold clamp to the lowest rung.
    """
    thresholds = [t for t, _ in ladder]
    k = bisect.bisect_right(thresholds, score) - 1
    return ladder[max(k, 0)][1]


@dataclass(frozen=True)
class LadderPolicy:
    """Score-and-ladder pacing.

    At the end of interval t the policy computes the remaining budget, the
    average spend per participation in the most recent interval that had
    any spend, and the expected number of remaining auctions from the
    arrival rate, then maps their score through ``ladder``.
    """

    budget: float
    bid: float
    arrival_rate_per_day: float
    duration_hours: float
    interval_minutes: float
    ladder: tuple[tuple[float, float], ...] = DEFAULT_LADDER
    initial_probability: float = 0.9

    @classmethod
    def from_config(cls, config) -> "LadderPolicy":
        return cls(
            budget=config.budget,
            bid=config.bid,
            arrival_rate_per_day=config.arrival_rate_per_day,
            duration_hours=config.duration_hours,
            interval_minutes=config.interval_minutes,
            ladder=tuple(tuple(r) for r in config.prob_ladder),
            initial_probability=config.initial_probability,
        )

    def recent_avg_expenditure(self, history: History) -> float:
        # carry forward past intervals with no participations or no spend
        for s in reversed(history.intervals):
            if s.participations > 0 and s.spend > 0:
                return s.spend / s.participations
        return self.bid

    def pacing_state(self, history: History) -> PacingState:
        t = history.last_interval
        remaining_minutes = max(0.0, self.duration_hours * 60.0 - (t + 1) * self.interval_minutes)
        current = history.intervals[-1].p if history.intervals else self.initial_probability
        return PacingState(
            interval_index=t,
            remaining_budget=max(0.0, self.budget - history.total_spend),
            recent_avg_expenditure=self.recent_avg_expenditure(history),
            expected_remaining_auctions=self.arrival_rate_per_day / 1440.0 * remaining_minutes,
            current_probability=current,
        )

    def __call__(self, history: History) -> float:
        return ladder_probability(pacing_score(self.pacing_state(history)), self.ladder)


@dataclass(frozen=True)
class ConstantPolicy:
    probability: float

    @property
    def initial_probability(self) -> float:
        return self.probability

    def __call__(self, history: History) -> float:
        return self.probability


@dataclass(frozen=True)
class ScheduledPolicy:
    """Replays a fixed probability path, ignoring the history's content.

    ``path[t]`` is the probability for interval t; intervals past the end
    reuse the last value.
    """

    path: tuple[float, ...]

    @property
    def initial_probability(self) -> float:
        return self.path[0]

    def __call__(self, history: History) -> float:
        t = history.last_interval + 1
        return self.path[min(t, len(self.path) - 1)]
