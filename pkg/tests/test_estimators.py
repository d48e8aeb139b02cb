import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_records
from throttle_lift.errors import DegenerateArm, DegenerateStratum, NoCompliers, ZeroFirstStage
from throttle_lift.estimators import (
    StratumStats, conversion_lift, estimate_late, naive_iv_wald, ols_estimate, ratio_form, stratify,
    stratum_itt, stratum_late, summarize_strata, true_late, weighted_late,
)
from throttle_lift.records import Records
from throttle_lift.sim import Potentials


def stats(p, n, itt_y, itt_d):
    return StratumStats(p, n, n / 2, n / 2, itt_y, itt_d, n * itt_d, itt_y / itt_d if itt_d else math.nan)


def test_stratify_partitions():
    rec = make_records([0.3, 0.3, 0.9, 0.9, 0.9], [1, 0, 1, 0, 1], [0] * 5, [0] * 5)
    groups = stratify(rec)
    assert sorted(groups) == [0.3, 0.9]
    assert sum(len(g) for g in groups.values()) == 5
    assert stratify(Records.empty()) == {}


def test_binning_merges_near_equal_probabilities():
    rec = make_records([0.30000001, 0.3], [1, 0], [0, 0], [0, 0])
    assert len(stratify(rec)) == 2
    assert len(stratify(rec, bin_width=0.01)) == 1


def test_stratum_itt_hand_fixture():
    rec = make_records(0.5, [1, 1, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0])
    assert stratum_itt(rec) == (0.5, 0.5)


def test_stratum_itt_symmetric_outcome():
    rec = make_records(0.5, [1, 1, 0, 0], [1, 0, 0, 0], [1, 1, 1, 1])
    assert stratum_itt(rec)[0] == 0.0


def test_stratum_itt_needs_both_arms():
    with pytest.raises(DegenerateStratum):
        stratum_itt(make_records(0.5, [1, 1], [1, 0], [1, 0]))


@pytest.mark.parametrize("itt_y,itt_d,expected", [(0.5, 0.5, 1.0), (0.0, 0.4, 0.0)])
def test_stratum_late(itt_y, itt_d, expected):
    assert stratum_late(stats(0.5, 10, itt_y, itt_d)) == expected


def test_stratum_late_zero_first_stage():
    with pytest.raises(ZeroFirstStage):
        stratum_late(stats(0.5, 10, 0.1, 0.0))


def test_weighted_late_single_stratum():
    res = weighted_late([stats(0.5, 10, 0.5, 0.5)])
    assert res.tau_hat == 1.0
    assert res.weights == {0.5: 1.0}


def test_weighted_late_two_strata_matches_ratio():
    res = weighted_late([stats(0.3, 100, 0.2, 0.5), stats(0.9, 300, 0.05, 0.25)])
    assert res.tau_hat == pytest.approx(0.28, rel=1e-12)
    assert sum(res.weights.values()) == pytest.approx(1.0, abs=1e-12)


def test_zero_first_stage_stratum_dropped(caplog):
    strata = [stats(0.3, 100, 0.2, 0.5), stats(0.9, 300, 0.05, 0.0)]
    with caplog.at_level(logging.WARNING):
        res = weighted_late(strata)
    assert res.tau_hat == pytest.approx(0.4)
    assert res.dropped == [0.9]
    assert "zero first stage" in caplog.text


def test_no_compliers():
    with pytest.raises(NoCompliers):
        weighted_late([stats(0.3, 100, 0.2, 0.0)])


def test_ols_hand():
    rec = make_records(0.5, [1, 0], [1, 0], [1, 0])
    assert ols_estimate(rec) == 1.0
    assert ols_estimate(make_records(0.5, [1, 1, 0], [1, 0, 0], [3, 3, 3])) == 0.0
    with pytest.raises(DegenerateArm):
        ols_estimate(make_records(0.5, [1, 0], [0, 0], [1, 0]))


def test_naive_iv_hand():
    rec = make_records(0.5, [1, 1, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0])
    assert naive_iv_wald(rec) == 1.0
    rec = make_records(0.5, [1, 1, 0, 0], [1, 0, 0, 0], [1, 0, 1, 0])
    assert naive_iv_wald(rec) == 0.0


@pytest.mark.parametrize("tau,mean_y,expected", [(0.011, 0.021, 1.10), (0.044, 0.022, None), (0.0, 0.02, 0.0)])
def test_conversion_lift(tau, mean_y, expected):
    got = conversion_lift(tau, mean_y)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected, rel=1e-12)


def _potentials(d1, y0, y1):
    n = len(d1)
    z = np.zeros(n)
    return Potentials(np.arange(n), z, z.astype(bool), z, np.asarray(d1), np.asarray(y0), np.asarray(y1), z)


def test_true_late_hand():
    assert true_late(_potentials([0, 0, 1], [0, 1, 0], [0, 1, 1])) == 1.0
    assert true_late(_potentials([1, 1, 0], [1, 0, 1], [1, 0, 1])) == 0.0
    with pytest.raises(NoCompliers):
        true_late(_potentials([0, 0], [0, 0], [1, 1]))


def test_true_late_default_run_range(default_run):
    assert 0.1 <= true_late(default_run.potentials) <= 0.4


def test_late_close_to_truth_on_simulated_run(default_run):
    from throttle_lift.inference import analytic_variance

    res = estimate_late(default_run.records)
    se = analytic_variance(res.strata, res.tau_hat, res.n_total).se
    assert abs(res.tau_hat - true_late(default_run.potentials)) <= 4 * se


# -- property tests ---------------------------------------------------------

@st.composite
def stratified_fixture(draw, min_strata=2, max_strata=5, min_rows=4, max_rows=50, compliance=None):
    k = draw(st.integers(min_strata, max_strata))
    probs = draw(st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.5, 0.7, 0.9]), min_size=k, max_size=k, unique=True))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    cols = {c: [] for c in ("p", "z", "d", "y")}
    for p in probs:
        n = int(rng.integers(min_rows, max_rows + 1))
        z = rng.permutation(np.r_[1, 1, 0, 0, (rng.random(n - 4) < p).astype(int)])
        if compliance == "perfect":
            d = z.copy()
        else:
            d = z * (rng.random(n) < 0.6)
            d[np.flatnonzero(z)[0]] = 1
        y = rng.normal(size=n) + d * 0.5
        for c, v in zip(("p", "z", "d", "y"), (np.full(n, p), z, d, y)):
            cols[c].append(v)
    return make_records(*(np.concatenate(cols[c]) for c in ("p", "z", "d", "y")))


@settings(max_examples=1000, deadline=None)
@given(stratified_fixture())
def test_weighted_form_equals_ratio_form(rec):
    strata = summarize_strata(rec)
    tau = weighted_late(strata).tau_hat
    assert tau == pytest.approx(ratio_form(strata), rel=1e-12, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(stratified_fixture())
def test_weights_normalized(rec):
    w = estimate_late(rec).weights
    assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(0 <= v <= 1 for v in w.values())


@settings(max_examples=200, deadline=None)
@given(stratified_fixture(min_strata=1, max_strata=1, max_rows=20))
def test_single_stratum_equals_marginal_wald(rec):
    assert estimate_late(rec).tau_hat == pytest.approx(naive_iv_wald(rec), rel=1e-12, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(stratified_fixture(max_rows=20, compliance="perfect"))
def test_perfect_compliance_collapse(rec):
    for s in summarize_strata(rec):
        assert s.itt_d == 1.0
        assert s.n_co_hat == s.n_p
        assert s.tau_p == s.itt_y


@settings(max_examples=100, deadline=None)
@given(stratified_fixture(), st.floats(-100, 100))
def test_location_equivariance(rec, c):
    shifted = Records(rec.unit_id, rec.interval, rec.p, rec.z, rec.d, rec.y + c, rec.e, rec.competitor_bid)
    assert estimate_late(shifted).tau_hat == pytest.approx(estimate_late(rec).tau_hat, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(stratified_fixture())
def test_unit_weights_match_unweighted(rec):
    assert estimate_late(rec, weighted=True).tau_hat == pytest.approx(estimate_late(rec).tau_hat, rel=1e-12)


def test_integer_weights_match_replication():
    rec = make_records([0.5] * 6, [1, 1, 1, 0, 0, 0], [1, 0, 1, 0, 0, 0], [1, 0, 0, 1, 0, 0],
                       weight=[2, 1, 1, 1, 3, 1])
    expanded = rec.take(np.repeat(np.arange(6), rec.weight.astype(int)))
    expanded = Records(expanded.unit_id, expanded.interval, expanded.p, expanded.z, expanded.d, expanded.y,
                       expanded.e, expanded.competitor_bid)
    assert estimate_late(rec, weighted=True).tau_hat == pytest.approx(estimate_late(expanded).tau_hat, rel=1e-12)


def test_degenerate_stratum_dropped(caplog):
    rec = make_records([0.3, 0.3, 0.3, 0.9, 0.9], [1, 0, 1, 1, 1], [1, 0, 0, 1, 0], [1, 0, 0, 1, 1])
    with caplog.at_level(logging.WARNING):
        res = estimate_late(rec)
    assert list(res.weights) == [0.3]
    assert "empty participation arm" in caplog.text
    with pytest.raises(DegenerateStratum):
        summarize_strata(rec, drop_degenerate=False)
