"""Design-based uncertainty for the stratified LATE estimator.

Two routes:

* :func:`analytic_variance` / :func:`normal_ci` treat the participation
  probabilities as fixed and apply the delta method to the ratio of total
  ITT to total compliers.
* :func:`bootstrap_inference` replays the throttling policy. In every
  interval the number of participations is redrawn from a binomial at the
  bootstrap path's probability, participated and non-participated rows are
  resampled separately from that interval's observed arms, and the policy
  then sets the next probability from the bootstrap history.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import BootstrapFailure, DegeneracyError, EmptyArm, InsufficientStratum
from .estimators import StratumStats, estimate_late
from .policy import History
from .records import Records

log = logging.getLogger(__name__)

MAX_FAILED_SHARE = 0.2


@dataclass(frozen=True)
class AnalyticVariance:
    omega_hat: float
    variance: float
    per_stratum: dict[float, tuple[float, float, float, float]]

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)


def analytic_variance(strata: list[StratumStats], tau_hat: float, n_total: float) -> AnalyticVariance:
    """Delta-method variance of the complier-weighted LATE.

    ``strata`` must come from :func:`~throttle_lift.estimators.summarize_strata`
    run with the same ``n_total``; strata with a zero first stage are ignored
    exactly as in the point estimate. Returns ``omega_hat / n_total``.
    """
    kept = [s for s in strata if s.itt_d != 0]
    total_co = sum(s.n_co_hat for s in kept)
    omega = 0.0
    per = {}
    for s in kept:
        if min(s.n_p1, s.n_p0) < 2 or math.isnan(s.sigma_y):
            raise InsufficientStratum(s.p)
        w = s.n_co_hat / total_co
        core = s.sigma_y + s.sigma_d * tau_hat**2 - 2.0 * s.sigma_yd * tau_hat
        contribution = w * w * core / s.itt_d**2
        per[s.p] = (s.sigma_y, s.sigma_d, s.sigma_yd, contribution)
        omega += contribution
    # the quadratic form is a variance; clip rounding noise
    omega = max(omega, 0.0)
    return AnalyticVariance(omega_hat=omega, variance=omega / n_total, per_stratum=per)


def normal_ci(tau_hat: float, variance: float, alpha: float = 0.05) -> tuple[float, float]:
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    half = z * math.sqrt(variance)
    return tau_hat - half, tau_hat + half


# ---------------------------------------------------------------------------
# bootstrap

class IntervalDesign:
    """Observed rows grouped by interval and participation arm.

    ``pools[a][t]`` holds row indices of arm ``a`` in interval ``t``.
    ``donor[a][t]`` is the interval whose arm-``a`` rows stand in when
    interval ``t`` has none: the nearest interval with a nonempty arm,
    earlier one on ties.
    """

    def __init__(self, records: Records):
        self.records = records
        n_intervals = int(records.interval.max()) + 1 if len(records) else 0
        if len(records) and records.interval.min() < 0:
            raise ValueError("interval indices must be nonnegative")
        self.n_intervals = n_intervals
        order = np.lexsort((np.arange(len(records)), records.interval))
        iv = records.interval[order]
        bounds = np.searchsorted(iv, np.arange(n_intervals + 1))
        self.n = np.diff(bounds)
        self.pools: dict[int, list[np.ndarray]] = {0: [], 1: []}
        for t in range(n_intervals):
            rows = order[bounds[t]:bounds[t + 1]]
            zt = records.z[rows]
            self.pools[1].append(rows[zt == 1])
            self.pools[0].append(rows[zt == 0])
        self.donor = {a: self._donors(self.pools[a]) for a in (0, 1)}

    @staticmethod
    def _donors(pool: list[np.ndarray]) -> list[int | None]:
        have = np.array([len(x) > 0 for x in pool], dtype=bool)
        idx = np.flatnonzero(have)
        out: list[int | None] = []
        for t in range(len(pool)):
            if have[t]:
                out.append(t)
            elif len(idx) == 0:
                out.append(None)
            else:
                k = np.searchsorted(idx, t)
                cands = [idx[j] for j in (k - 1, k) if 0 <= j < len(idx)]
                out.append(int(min(cands, key=lambda c: (abs(c - t), c))))
        return out

    def resample(self, t: int, arm: int, m: int, rng: np.random.Generator, empty_arm: str) -> np.ndarray:
        if m == 0:
            return np.empty(0, dtype=np.int64)
        pool = self.pools[arm][t]
        if len(pool) == 0:
            src = self.donor[arm][t] if empty_arm == "borrow" else None
            if src is None:
                raise EmptyArm(t, arm)
            pool = self.pools[arm][src]
        return pool[rng.integers(0, len(pool), size=m)]


def _sample_indices(design: IntervalDesign, policy, rng, empty_arm: str):
    e = design.records.e
    history = History()
    p = policy.initial_probability
    idx_parts, p_parts, t_parts, path = [], [], [], []
    for t in range(design.n_intervals):
        n_t = int(design.n[t])
        path.append(p)
        n1 = int(rng.binomial(n_t, p)) if n_t else 0
        i1 = design.resample(t, 1, n1, rng, empty_arm)
        i0 = design.resample(t, 0, n_t - n1, rng, empty_arm)
        idx_parts += [i1, i0]
        p_parts.append(np.full(n_t, p))
        t_parts.append(np.full(n_t, t, dtype=np.int64))
        history.append(t, p, n_t, n1, float(e[i1].sum()))
        p = policy(history)
    idx = np.concatenate(idx_parts) if idx_parts else np.empty(0, dtype=np.int64)
    pb = np.concatenate(p_parts) if p_parts else np.empty(0)
    tb = np.concatenate(t_parts) if t_parts else np.empty(0, dtype=np.int64)
    return idx, pb, tb, np.array(path)


def _with_p(records: Records, idx: np.ndarray, p: np.ndarray, interval: np.ndarray) -> Records:
    # borrowed rows take the interval they were drawn into
    r = records
    return Records(r.unit_id[idx], interval, p, r.z[idx], r.d[idx], r.y[idx], r.e[idx],
                   r.competitor_bid[idx], r.weight[idx])


def bootstrap_sample(
    records: Records,
    policy,
    rng: np.random.Generator,
    empty_arm: str = "borrow",
    design: IntervalDesign | None = None,
) -> Records:
    """One bootstrap campaign drawn by replaying ``policy``.

    Each output row carries the bootstrap path's probability for its
    interval; interval sizes match the observed ones. With
    ``empty_arm="discard"`` a draw that needs rows from an empty observed
    arm raises :class:`EmptyArm`; ``"borrow"`` resamples that arm from the
    nearest interval that has one.
    """
    design = design or IntervalDesign(records)
    idx, pb, tb, _ = _sample_indices(design, policy, rng, empty_arm)
    return _with_p(records, idx, pb, tb)


def bootstrap_paths(records: Records, policy, B: int, seed=0, empty_arm: str = "borrow") -> np.ndarray:
    """Bootstrap probability paths, shape ``(B, n_intervals)``."""
    design = IntervalDesign(records)
    out = np.empty((B, design.n_intervals))
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(B)):
        out[b] = _sample_indices(design, policy, np.random.default_rng(child), empty_arm)[3]
    return out


@dataclass(frozen=True)
class BootstrapResult:
    tau_hat: float
    replicates: np.ndarray
    variance: float
    se: float
    ci_percentile: tuple[float, float, float]
    b_count: int
    seed: int
    failed_replicates: int
    ci_plain: tuple[float, float] = (math.nan, math.nan)


def reverse_percentile_ci(tau_hat: float, replicates: np.ndarray, alpha: float) -> tuple[float, float]:
    """Interval ``[tau - xi(1 - alpha/2), tau - xi(alpha/2)]``, xi the quantiles of ``tau_b - tau``.

    This reflects the bootstrap distribution around ``tau_hat``. When the
    replicates are not centred on ``tau_hat`` the reflection moves the
    interval away from them; :attr:`BootstrapResult.ci_plain` keeps the
    unreflected quantiles for comparison.
    """
    dev = np.asarray(replicates) - tau_hat
    lo_q, hi_q = np.quantile(dev, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(tau_hat - hi_q), float(tau_hat - lo_q)


def _replicate(args):
    records, design, policy, child, empty_arm, bin_width, weighted = args
    rng = np.random.default_rng(child)
    try:
        idx, pb, tb, _ = _sample_indices(design, policy, rng, empty_arm)
        return estimate_late(_with_p(records, idx, pb, tb), bin_width=bin_width, weighted=weighted).tau_hat
    except DegeneracyError as exc:
        log.debug("bootstrap replicate discarded: %s", exc)
        return None


def bootstrap_inference(
    records: Records,
    policy,
    B: int = 200,
    alpha: float = 0.05,
    seed: int | np.random.SeedSequence = 0,
    empty_arm: str = "borrow",
    bin_width: float | None = None,
    weighted: bool = False,
    n_jobs: int = 1,
) -> BootstrapResult:
    """Bootstrap variance and reverse-percentile interval for the LATE.

    Replicate ``b`` uses the ``b``-th child of ``SeedSequence(seed)``, so the
    result does not depend on ``n_jobs``. Replicates that hit a degenerate
    sample are discarded and counted; more than 20% discarded raises
    :class:`BootstrapFailure`.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if empty_arm not in ("borrow", "discard"):
        raise ValueError("empty_arm must be 'borrow' or 'discard'")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    tau_hat = estimate_late(records, bin_width=bin_width, weighted=weighted).tau_hat
    design = IntervalDesign(records)
    jobs = [(records, design, policy, child, empty_arm, bin_width, weighted) for child in ss.spawn(B)]
    if n_jobs == 1:
        taus = [_replicate(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            taus = list(pool.map(_replicate, jobs, chunksize=max(1, B // (4 * n_jobs))))
    good = np.array([t for t in taus if t is not None])
    failed = B - len(good)
    if failed > MAX_FAILED_SHARE * B or len(good) < 2:
        raise BootstrapFailure(f"{failed} of {B} bootstrap replicates were degenerate")
    var = float(np.var(good, ddof=1))
    lo, hi = reverse_percentile_ci(tau_hat, good, alpha)
    plain = tuple(float(q) for q in np.quantile(good, [alpha / 2.0, 1.0 - alpha / 2.0]))
    entropy = ss.entropy if isinstance(ss.entropy, int) else 0
    return BootstrapResult(
        tau_hat=tau_hat, replicates=good, variance=var, se=math.sqrt(var),
        ci_percentile=(lo, hi, alpha), b_count=B, seed=entropy, failed_replicates=failed,
        ci_plain=plain,
    )
