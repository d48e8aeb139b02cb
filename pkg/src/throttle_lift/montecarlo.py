"""Monte Carlo replication harness: bias/RMSE of the estimators and CI coverage."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegeneracyError
from .estimators import estimate_late, naive_iv_wald, ols_estimate, true_late
from .inference import analytic_variance, bootstrap_inference, normal_ci
from .policy import LadderPolicy
from .records import atomic_write_text, fmt_num, rows_to_csv
from .sim import CampaignConfig, run_campaign

METHODS = ("tau_hat", "ols", "iv")

REPLICATE_FIELDS = (
    "true_late", "tau_hat", "ols", "iv", "se_analytic", "se_bootstrap",
    "ci_analytic_low", "ci_analytic_high", "ci_bootstrap_low", "ci_bootstrap_high",
    "ci_plain_low", "ci_plain_high",
)
CSV_COLUMNS = ("section", "label") + REPLICATE_FIELDS + ("mean", "bias", "rmse", "se", "coverage", "n")


@dataclass(frozen=True)
class ReplicateRow:
    index: int
    true_late: float
    tau_hat: float = math.nan
    ols: float = math.nan
    iv: float = math.nan
    se_analytic: float = math.nan
    se_bootstrap: float = math.nan
    ci_analytic: tuple[float, float] = (math.nan, math.nan)
    ci_bootstrap: tuple[float, float] = (math.nan, math.nan)
    ci_plain: tuple[float, float] = (math.nan, math.nan)
    errors: tuple[str, ...] = ()

    def values(self) -> dict[str, float]:
        return {
            "true_late": self.true_late, "tau_hat": self.tau_hat, "ols": self.ols, "iv": self.iv,
            "se_analytic": self.se_analytic, "se_bootstrap": self.se_bootstrap,
            "ci_analytic_low": self.ci_analytic[0], "ci_analytic_high": self.ci_analytic[1],
            "ci_bootstrap_low": self.ci_bootstrap[0], "ci_bootstrap_high": self.ci_bootstrap[1],
            "ci_plain_low": self.ci_plain[0], "ci_plain_high": self.ci_plain[1],
        }


@dataclass(frozen=True)
class MethodSummary:
    mean: float
    bias: float
    rmse: float
    n: int


@dataclass(frozen=True)
class ReplicationReport:
    r_count: int
    per_replicate: list[ReplicateRow]
    summary: dict[str, MethodSummary]
    coverage: dict[str, float]
    mean_se: dict[str, float]
    empirical_sd: float
    sd_tau_hat: float
    config_digest: str
    master_seed: int
    with_bootstrap: bool = False
    B: int = 0
    alpha: float = 0.05
    meta: dict = field(default_factory=dict)


def config_digest(config: CampaignConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _one(args) -> ReplicateRow:
    index, config, child, with_bootstrap, B, alpha, empty_arm = args
    sim_ss, boot_ss = child.spawn(2)
    run = run_campaign(config, rng=np.random.default_rng(sim_ss))
    rec = run.records
    out: dict = {"index": index, "true_late": true_late(run.potentials)}
    errors = []
    try:
        res = estimate_late(rec)
        out["tau_hat"] = res.tau_hat
        av = analytic_variance(res.strata, res.tau_hat, res.n_total)
        out["se_analytic"] = av.se
        out["ci_analytic"] = normal_ci(res.tau_hat, av.variance, alpha)
    except DegeneracyError as exc:
        errors.append(f"late: {exc}")
    for name, fn in (("ols", ols_estimate), ("iv", naive_iv_wald)):
        try:
            out[name] = fn(rec)
        except DegeneracyError as exc:
            errors.append(f"{name}: {exc}")
    if with_bootstrap and "tau_hat" in out:
        try:
            bs = bootstrap_inference(rec, LadderPolicy.from_config(config), B=B, alpha=alpha,
                                     seed=boot_ss, empty_arm=empty_arm)
            out["se_bootstrap"] = bs.se
            out["ci_bootstrap"] = bs.ci_percentile[:2]
            out["ci_plain"] = bs.ci_plain
        except DegeneracyError as exc:
            errors.append(f"bootstrap: {exc}")
    return ReplicateRow(errors=tuple(errors), **out)


def summarize(rows: list[ReplicateRow], with_bootstrap: bool) -> tuple[dict, dict, dict, float, float]:
    truth = np.array([r.true_late for r in rows])
    summary = {"true_late": MethodSummary(float(truth.mean()), 0.0, 0.0, len(rows))}
    for m in METHODS:
        est = np.array([getattr(r, m) for r in rows])
        ok = np.isfinite(est)
        err = est[ok] - truth[ok]
        if ok.any():
            summary[m] = MethodSummary(float(est[ok].mean()), float(err.mean()),
                                       float(np.sqrt(np.mean(err**2))), int(ok.sum()))
        else:
            summary[m] = MethodSummary(math.nan, math.nan, math.nan, 0)
    coverage, mean_se = {}, {}
    # "plain" is the unreflected percentile interval, reported as a diagnostic
    kinds = ("analytic", "bootstrap", "plain") if with_bootstrap else ("analytic",)
    for kind in kinds:
        lo = np.array([getattr(r, f"ci_{kind}")[0] for r in rows])
        hi = np.array([getattr(r, f"ci_{kind}")[1] for r in rows])
        se = np.array([getattr(r, "se_bootstrap" if kind == "plain" else f"se_{kind}") for r in rows])
        ok = np.isfinite(lo) & np.isfinite(hi)
        coverage[kind] = float(np.mean((lo[ok] <= truth[ok]) & (truth[ok] <= hi[ok]))) if ok.any() else math.nan
        mean_se[kind] = float(np.mean(se[np.isfinite(se)])) if np.isfinite(se).any() else math.nan
    tau = np.array([r.tau_hat for r in rows])
    ok = np.isfinite(tau)
    # spread of the error around each replicate's own estimand
    empirical_sd = float(np.std(tau[ok] - truth[ok], ddof=1)) if ok.sum() > 1 else math.nan
    sd_tau = float(np.std(tau[ok], ddof=1)) if ok.sum() > 1 else math.nan
    return summary, coverage, mean_se, empirical_sd, sd_tau


def run_replications(
    config: CampaignConfig,
    R: int,
    with_bootstrap: bool = False,
    B: int = 200,
    master_seed: int = 0,
    alpha: float = 0.05,
    n_jobs: int = 1,
    empty_arm: str = "borrow",
) -> ReplicationReport:
    """Simulate ``R`` campaigns and score every estimator against its own true LATE.

    Replicate ``r`` draws from the ``r``-th child of ``SeedSequence(master_seed)``,
    so the report is identical for any ``n_jobs``.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    children = np.random.SeedSequence(master_seed).spawn(R)
    jobs = [(r, config, children[r], with_bootstrap, B, alpha, empty_arm) for r in range(R)]
    if n_jobs == 1:
        rows = [_one(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_one, jobs))
    summary, coverage, mean_se, emp_sd, sd_tau = summarize(rows, with_bootstrap)
    return ReplicationReport(
        r_count=R, per_replicate=rows, summary=summary, coverage=coverage, mean_se=mean_se,
        empirical_sd=emp_sd, sd_tau_hat=sd_tau, config_digest=config_digest(config),
        master_seed=master_seed, with_bootstrap=with_bootstrap, B=B if with_bootstrap else 0,
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# reporting

def _table1_rows(report: ReplicationReport):
    for label, s in report.summary.items():
        yield {"section": "table1", "label": label, "mean": s.mean, "bias": s.bias, "rmse": s.rmse, "n": s.n}


def _table2_rows(report: ReplicationReport):
    n_ok = report.summary["tau_hat"].n
    yield {"section": "table2", "label": "empirical", "se": report.empirical_sd, "n": n_ok}
    for kind, cov in report.coverage.items():
        yield {"section": "table2", "label": kind, "se": report.mean_se[kind], "coverage": cov, "n": n_ok}


def _replicate_rows(report: ReplicationReport):
    for r in report.per_replicate:
        yield {"section": "replicate", "label": r.index, **r.values()}


def _render(rows, columns) -> str:
    body = ([fmt_num(row[c]) if isinstance(row.get(c), (int, float)) else str(row.get(c, "")) for c in columns]
            for row in rows)
    return rows_to_csv(columns, body)


def emit_report(report: ReplicationReport, format: str = "csv") -> str:
    """Render the report as one CSV (``section`` column) or as markdown tables."""
    if format == "csv":
        rows = list(_replicate_rows(report)) + list(_table1_rows(report)) + list(_table2_rows(report))
        return _render(rows, CSV_COLUMNS)
    if format in ("markdown", "markdown-table"):
        return _markdown(report)
    raise ValueError(f"unknown format {format!r}")


def parse_report_csv(text: str) -> dict[str, list[dict]]:
    """Inverse of ``emit_report(..., "csv")``: rows grouped by section, numbers as floats."""
    out: dict[str, list[dict]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        parsed = {}
        for k, v in row.items():
            if k in ("section",):
                parsed[k] = v
            elif v == "":
                continue
            else:
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
        out.setdefault(row["section"], []).append(parsed)
    return out


def _md(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def _markdown(report: ReplicationReport) -> str:
    names = {"true_late": "True LATE", "tau_hat": "Stratified LATE", "ols": "OLS", "iv": "IV"}
    lines = [f"Replications: {report.r_count} (seed {report.master_seed}, config {report.config_digest})", "",
             "| Method | Mean | Bias | RMSE |", "|---|---:|---:|---:|"]
    for label, s in report.summary.items():
        lines.append(f"| {names.get(label, label)} | {_md(s.mean)} | {_md(s.bias)} | {_md(s.rmse)} |")
    kinds = list(report.coverage)
    heads = {"analytic": "Analytic", "bootstrap": "Bootstrap", "plain": "Bootstrap (plain percentile)"}
    lines += ["", "| | Empirical | " + " | ".join(heads.get(k, k) for k in kinds) + " |",
              "|---|---:|" + "---:|" * len(kinds),
              f"| Standard error | {_md(report.empirical_sd)} | "
              + " | ".join(_md(report.mean_se[k]) for k in kinds) + " |",
              f"| {100 * (1 - report.alpha):.0f}% coverage | | "
              + " | ".join(f"{100 * report.coverage[k]:.1f}%" for k in kinds) + " |"]
    return "\n".join(lines) + "\n"


def write_report(report: ReplicationReport, out_dir) -> None:
    """Write ``table1.csv``, ``table2.csv`` and ``replicates.csv``."""
    out = Path(out_dir)
    t1 = ({**r, "method": r["label"]} for r in _table1_rows(report))
    t2 = ({**r, "estimator": r["label"]} for r in _table2_rows(report))
    atomic_write_text(out / "table1.csv", _render(t1, ("method", "mean", "bias", "rmse", "n")))
    atomic_write_text(out / "table2.csv", _render(t2, ("estimator", "se", "coverage", "n")))
    atomic_write_text(out / "replicates.csv", _render(_replicate_rows(report), ("label",) + REPLICATE_FIELDS))
