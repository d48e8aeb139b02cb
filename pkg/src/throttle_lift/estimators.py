"""Stratified conditional-IV estimation of the exposure LATE.

Participation is randomized only among auctions that share a participation
probability, so the estimator works stratum by stratum: a Wald ratio inside
each stratum, then an average weighted by the estimated number of compliers.
OLS and the unstratified Wald ratio are provided as (biased) baselines.

Every estimator accepts per-record weights (``weighted=True``), which
replace counts by weight sums; with unit weights the formulas reduce to the
plain difference-in-means versions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateArm, DegenerateStratum, NoCompliers, ZeroFirstStage
from .records import Records

log = logging.getLogger(__name__)

_BIN_EPS = 1e-9


@dataclass(frozen=True)
class StratumStats:
    p: float
    n_p: float
    n_p1: float
    n_p0: float
    itt_y: float
    itt_d: float
    n_co_hat: float
    tau_p: float
    sigma_y: float = math.nan
    sigma_d: float = math.nan
    sigma_yd: float = math.nan


@dataclass(frozen=True)
class ConfidenceInterval:
    low: float
    high: float
    alpha: float
    method: str


@dataclass(frozen=True)
class LateResult:
    tau_hat: float
    weights: dict[float, float]
    strata: list[StratumStats]
    n_total: float
    variance_analytic: Optional[float] = None
    variance_bootstrap: Optional[float] = None
    ci: Optional[ConfidenceInterval] = None
    dropped: list[float] = field(default_factory=list)


def _weights(records: Records, weighted: bool) -> np.ndarray:
    return records.weight if weighted else np.ones(len(records))


def stratum_keys(p: np.ndarray, bin_width: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stratum labels and the per-record index into them.

    Exact mode groups on the float value of p. Binned mode groups on
    ``floor(p / bin_width)`` and labels each bin by its lower edge.
    """
    p = np.asarray(p, dtype=float)
    if bin_width is None:
        return np.unique(p, return_inverse=True)
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    k = np.floor(p / bin_width + _BIN_EPS).astype(np.int64)
    ks, inverse = np.unique(k, return_inverse=True)
    labels = np.round(ks * bin_width, 12)
    return labels, inverse


def stratify(records: Records, bin_width: float | None = None) -> dict[float, Records]:
    if len(records) == 0:
        return {}
    labels, inverse = stratum_keys(records.p, bin_width)
    return {float(lab): records.take(inverse == k) for k, lab in enumerate(labels)}


def _wmean(x, w):
    sw = w.sum()
    return float((w * x).sum() / sw)


def stratum_itt(records: Records, weighted: bool = False) -> tuple[float, float]:
    """Intent-to-treat effects on outcome and exposure within one stratum."""
    w = _weights(records, weighted)
    on = records.z == 1
    if not (w[on].sum() > 0 and w[~on].sum() > 0):
        raise DegenerateStratum("stratum needs units in both participation arms")
    itt_y = _wmean(records.y[on], w[on]) - _wmean(records.y[~on], w[~on])
    itt_d = _wmean(records.d[on], w[on])
    return itt_y, itt_d


def stratum_late(stats: StratumStats) -> float:
    if stats.itt_d == 0:
        raise ZeroFirstStage(f"stratum p={stats.p}: no exposure among participants")
    return stats.itt_y / stats.itt_d


def summarize_strata(
    records: Records,
    bin_width: float | None = None,
    weighted: bool = False,
    drop_degenerate: bool = True,
) -> list[StratumStats]:
    """Per-stratum aggregates, including the delta-method variance components.

    The variance components use (n-1)-denominator within-arm sample moments
    scaled by the total size n; they are NaN when an arm has fewer than two
    units. Strata with an empty arm are dropped with a warning, or raise
    :class:`DegenerateStratum` when ``drop_degenerate`` is false.
    """
    if len(records) == 0:
        return []
    labels, inv = stratum_keys(records.p, bin_width)
    k = len(labels)
    w = _weights(records, weighted)
    z1 = records.z == 1
    w1, w0 = np.where(z1, w, 0.0), np.where(z1, 0.0, w)
    y, d = records.y, records.d.astype(float)

    def s(weights, x=None):
        return np.bincount(inv, weights if x is None else weights * x, minlength=k)

    n1, n0 = s(w1), s(w0)
    with np.errstate(invalid="ignore", divide="ignore"):
        my1, my0, md1 = s(w1, y) / n1, s(w0, y) / n0, s(w1, d) / n1
    # centered second moments, two-pass for accuracy
    cy1 = np.where(z1, y - my1[inv], 0.0)
    cy0 = np.where(z1, 0.0, y - my0[inv])
    cd1 = np.where(z1, d - md1[inv], 0.0)
    ssy1, ssy0, ssd1, scyd1 = s(w1, cy1 * cy1), s(w0, cy0 * cy0), s(w1, cd1 * cd1), s(w1, cy1 * cd1)
    n_total = float(w.sum())

    out = []
    for j, lab in enumerate(labels):
        if not (n1[j] > 0 and n0[j] > 0):
            if not drop_degenerate:
                raise DegenerateStratum(f"stratum p={lab}: empty participation arm")
            log.warning("dropping stratum p=%s: empty participation arm (n1=%s, n0=%s)", lab, n1[j], n0[j])
            continue
        itt_y, itt_d = my1[j] - my0[j], md1[j]
        n_p = n1[j] + n0[j]
        if n1[j] > 1 and n0[j] > 1:
            var_y1 = ssy1[j] / (n1[j] - 1)
            var_y0 = ssy0[j] / (n0[j] - 1)
            var_d1 = ssd1[j] / (n1[j] - 1)
            cov_yd1 = scyd1[j] / (n1[j] - 1)
            sigma_y = n_total * (var_y1 / n1[j] + var_y0 / n0[j])
            sigma_d = n_total * var_d1 / n1[j]
            sigma_yd = n_total * cov_yd1 / n1[j]
        else:
            sigma_y = sigma_d = sigma_yd = math.nan
        out.append(StratumStats(
            p=float(lab), n_p=float(n_p), n_p1=float(n1[j]), n_p0=float(n0[j]),
            itt_y=float(itt_y), itt_d=float(itt_d), n_co_hat=float(n_p * itt_d),
            tau_p=float(itt_y / itt_d) if itt_d != 0 else math.nan,
            sigma_y=float(sigma_y), sigma_d=float(sigma_d), sigma_yd=float(sigma_yd),
        ))
    return out


def weighted_late(strata: list[StratumStats], n_total: float | None = None) -> LateResult:
    """Complier-weighted average of per-stratum Wald ratios.

    Strata with a zero first stage carry no compliers; they are dropped
    with a warning and excluded from every sum.
    """
    kept, dropped = [], []
    for s in strata:
        if s.itt_d == 0:
            log.warning("dropping stratum p=%s: zero first stage", s.p)
            dropped.append(s.p)
        else:
            kept.append(s)
    if not kept:
        raise NoCompliers("no stratum has a nonzero first stage")
    total_co = sum(s.n_co_hat for s in kept)
    weights = {s.p: s.n_co_hat / total_co for s in kept}
    tau = sum(weights[s.p] * stratum_late(s) for s in kept)
    if n_total is None:
        n_total = sum(s.n_p for s in strata)
    return LateResult(tau_hat=float(tau), weights=weights, strata=kept, n_total=float(n_total), dropped=dropped)


def ratio_form(strata: list[StratumStats]) -> float:
    """Total ITT on outcomes over total estimated compliers."""
    kept = [s for s in strata if s.itt_d != 0]
    return sum(s.n_p * s.itt_y for s in kept) / sum(s.n_p * s.itt_d for s in kept)


def estimate_late(records: Records, bin_width: float | None = None, weighted: bool = False) -> LateResult:
    w = _weights(records, weighted)
    strata = summarize_strata(records, bin_width=bin_width, weighted=weighted)
    if not strata:
        raise NoCompliers("no stratum has both participation arms")
    return weighted_late(strata, n_total=float(w.sum()))


def ols_estimate(records: Records, weighted: bool = False) -> float:
    """Difference in mean outcome between exposed and unexposed units."""
    w = _weights(records, weighted)
    on = records.d == 1
    if not (w[on].sum() > 0 and w[~on].sum() > 0):
        raise DegenerateArm("both exposure arms must be nonempty")
    return _wmean(records.y[on], w[on]) - _wmean(records.y[~on], w[~on])


def naive_iv_wald(records: Records, weighted: bool = False) -> float:
    """Unstratified Wald ratio using participation as the instrument."""
    w = _weights(records, weighted)
    on = records.z == 1
    if not (w[on].sum() > 0 and w[~on].sum() > 0):
        raise DegenerateArm("both participation arms must be nonempty")
    first = _wmean(records.d[on], w[on]) - _wmean(records.d[~on], w[~on])
    if first == 0:
        raise ZeroFirstStage("participation does not move exposure")
    return (_wmean(records.y[on], w[on]) - _wmean(records.y[~on], w[~on])) / first


def mean_outcome_exposed(records: Records, weighted: bool = False) -> float:
    w = _weights(records, weighted)
    on = records.d == 1
    if not w[on].sum() > 0:
        raise DegenerateArm("no exposed units")
    return _wmean(records.y[on], w[on])


def conversion_lift(tau: float, mean_y_given_d1: float) -> float | None:
    """Effect relative to the implied unexposed baseline ``E[Y|D=1] - tau``.

    Returns ``None`` when that baseline is not positive, which is
    impossible for a conversion rate and so signals an invalid estimate.
    """
    if tau == 0:
        return 0.0
    baseline = mean_y_given_d1 - tau
    if baseline <= 0:
        return None
    return tau / baseline


def true_late(potentials) -> float:
    """In-sample LATE over compliers, from stored potential outcomes."""
    d1 = np.asarray(potentials.d1, dtype=float)
    if d1.sum() == 0:
        raise NoCompliers("no unit would be exposed under participation")
    effect = np.asarray(potentials.y1, dtype=float) - np.asarray(potentials.y0, dtype=float)
    return float((d1 * effect).sum() / d1.sum())
