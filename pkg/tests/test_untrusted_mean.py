import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedspar.dp_core import InvalidArgument, Rng
from fedspar.fednet import FederatedRun, ProtocolFault, round_gather
from fedspar.untrusted_mean import (
    MeanEstimate,
    SignVector,
    aggregate_mean,
    bernoulli_mean,
    clamp_margin,
    flip_probability,
    local_sign_report,
    mean_datasets,
    run_untrusted_mean,
    sign_vector,
    simulate_reports,
)


def test_infinite_budget_reports_true_signs():
    data = mean_datasets(np.array([0.3, -0.2, 0.0, 1.0]), 5, 10, Rng(0))
    for ds in data:
        rel = local_sign_report(ds, Rng(1), math.inf, k_sub=1)
        assert np.array_equal(rel.value, sign_vector(ds).z)


def test_zero_mean_signs_are_fair_coins():
    z = np.concatenate([sign_vector(ds).z for ds in mean_datasets(np.zeros(8), 2000, 5, Rng(2))])
    assert abs(np.mean(z == 1) - 0.5) < 0.01


def test_flip_rate_at_log3_is_a_quarter():
    assert math.isclose(flip_probability(math.log(3)), 0.25, rel_tol=1e-12)
    B = simulate_reports(np.full(1, 5.0), 100_000, 100, math.log(3), Rng(3))
    assert abs(np.mean(B == -1) - 0.25) < 0.01


def test_bernoulli_mean_matches_mpmath():
    assert abs(bernoulli_mean(np.array([1.0]), 2)[0] - float(mpmath.erf(1))) < 1e-12
    assert abs(float(mpmath.erf(1)) - 0.842701) < 1e-6


@given(st.floats(-0.99, 0.99), st.integers(1, 500))
def test_inverse_round_trip(v, n):
    est = MeanEstimate(np.zeros(1), np.array([v]), 1.0, n, 0.0)
    mu = est.recompute()[0]
    assert abs(float(mpmath.erf(mu * mpmath.sqrt(n / 2))) - v) < 1e-6


def test_noiseless_aggregate_inverts_erf():
    # every machine reports +1 on coordinate 0 and a 3:1 split on coordinate 1
    B = np.array([[1, 1], [1, 1], [1, 1], [1, -1]] * 25, dtype=float)
    est = aggregate_mean(B, n=2, epsilon=math.inf, k_sub=2)
    kc = clamp_margin(100)
    assert est.v_hat[0] == 1 - kc
    assert math.isclose(est.v_hat[1], 0.5)
    assert math.isclose(est.mu_hat[1], float(mpmath.erfinv(0.5)), rel_tol=1e-12)


@given(st.integers(1, 400), st.floats(0.1, 5.0), st.integers(0, 2**31))
def test_clamp_keeps_estimates_finite(m, eps, seed):
    B = simulate_reports(np.full(6, 3.0), m, 50, eps, Rng(seed), k_sub=6)
    est = aggregate_mean(B, 50, eps, k_sub=6)
    assert np.all(np.abs(est.v_hat) < 1)
    assert np.all(np.isfinite(est.mu_hat))


@given(st.integers(1, 40), st.data())
def test_each_report_spends_exactly_epsilon(d, data):
    k_sub = data.draw(st.integers(1, d))
    eps = data.draw(st.floats(0.05, 8.0))
    ds = mean_datasets(np.zeros(d), 1, 3, Rng(d))[0]
    rel = local_sign_report(ds, Rng(0), eps, k_sub)
    c = math.ceil(d / k_sub)
    assert np.count_nonzero(rel.value) == c
    assert math.isclose(rel.budget.epsilon, eps, rel_tol=1e-12)
    assert rel.budget.delta == 0


def test_federated_run_matches_direct_reports():
    mu = np.array([0.5, 0, 0, -0.5, 0, 0])
    data = mean_datasets(mu, 20, 30, Rng(4))
    run = FederatedRun(data, None, Rng(5), trusted=False)
    est = run_untrusted_mean(run, 2.0, k_sub=6)
    direct = [local_sign_report(ds, run.rng, 2.0, 6) for ds in data]
    ref = aggregate_mean([r.value for r in direct], 30, 2.0, 6)
    assert np.array_equal(est.mu_hat, ref.mu_hat)
    assert {e.kind.value for e in run.log} == {"privatized_bits"}


def test_untrusted_run_rejects_unprivatized_upload():
    run = FederatedRun(mean_datasets(np.zeros(3), 2, 4, Rng(0)), None, Rng(0), trusted=False)
    with pytest.raises(ProtocolFault):
        round_gather(run, lambda v: sign_vector(v.data).z)


def test_trusted_run_rejected():
    run = FederatedRun(mean_datasets(np.zeros(3), 2, 4, Rng(0)), None, Rng(0))
    with pytest.raises(InvalidArgument):
        run_untrusted_mean(run, 1.0)


def test_top_s_and_validation():
    B = simulate_reports(np.array([2.0, 0, 0, 0]), 400, 4, 8.0, Rng(6), k_sub=4)
    est = aggregate_mean(B, 4, 8.0, k_sub=4, top_s=1)
    assert np.flatnonzero(est.mu_hat).tolist() == [0]
    with pytest.raises(InvalidArgument):
        aggregate_mean(B, 4, 8.0, k_sub=5)
    with pytest.raises(InvalidArgument):
        SignVector(np.array([1.0, 0.0]), 0)
    with pytest.raises(InvalidArgument):
        flip_probability(0.0)


def test_error_shrinks_with_more_machines():
    mu = np.zeros(16)
    mu[:2] = 0.25
    errs = []
    for m in (64, 4096):
        e = [np.sum((aggregate_mean(simulate_reports(mu, m, 16, 1.0, Rng(r), 16), 16, 1.0, 16).mu_hat
                     - mu) ** 2) for r in range(30)]
        errs.append(np.mean(e))
    assert errs[1] < errs[0] / 4
