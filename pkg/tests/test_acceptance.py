"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
Tolerances below are fixed; they are not tuned to the observed values.
"""

import math
import sys
import time
import warnings
from pathlib import Path
from unittest import mock

import numpy as np
import pytest
from scipy.stats import binomtest, kstest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE, MESSAGE_KINDS  # noqa: E402
from helpers import pooled_iht_oracle  # noqa: E402

import fedspar.estimators as est_mod  # noqa: E402
import fedspar.inference as inf_mod  # noqa: E402
from fedspar.bench import ScenarioConfig, run_scenario  # noqa: E402
from fedspar.dp_core import (  # noqa: E402
    PrivacyBudget,
    Rng,
    gaussian_std,
    laplace_scale,
    noisy_hard_threshold,
    noisy_hard_threshold_columns,
    noisy_ht_scale,
)
from fedspar.estimators import (  # noqa: E402
    NegativeVarianceWarning,
    fed_precision_matrix,
    fed_sparse_regression,
    private_variance,
)
from fedspar.fednet import FederatedRun, PayloadKind  # noqa: E402
from fedspar.inference import (  # noqa: E402
    bootstrap_simultaneous,
    debias_coordinates,
    debias_noise_variance,
    sigma_from_variance,
)
from fedspar.model import HyperParams, make_true_model, sample_federation  # noqa: E402
from fedspar.untrusted_mean import aggregate_mean, simulate_reports  # noqa: E402

# desk-scale design shared by criteria 4, 5 and 7
DESK = dict(n=500, m=5, d=100, s_star=5, s0=2, epsilon=2.0)


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _homogeneous_run(seed, n, m, d, s_star, eps, *, sigma=0.5, private=True, R=4.0,
                     kappa=0.002, eta=None, T=30, covariance=None):
    rng = Rng(seed)
    tm = make_true_model(m, d, s_star, 0, sigma, rng.child("model"), covariance=covariance,
                         homogeneous=True)
    data = sample_federation(tm, n, rng.child("data"))
    hp = HyperParams.from_primitives(m, n, d, s_star, PrivacyBudget(eps, 1 / (2 * m * n)),
                                     s_star=s_star, R=R, kappa=kappa, T=T, eta=eta,
                                     private=private)
    return tm, data, hp, FederatedRun(data, hp, rng.child("run"))


# ----------------------------------------------------------------------------- 1

def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    meta = Rng(2024)
    exact, worst = 0, 0.0
    for i in range(100):
        r = meta.child("instance", i)
        d = int(r.generator.integers(8, 33))
        s = int(r.generator.integers(1, 5))
        m = int(r.generator.integers(1, 5))
        tm, data, hp, run = _homogeneous_run(i, 120, m, d, s, 1.0, sigma=0.0, private=False,
                                             R=100.0, eta=0.5, T=80, covariance=np.eye(d))
        its = []
        res = fed_sparse_regression(run, hp, on_round=lambda t, b: its.append(b))
        ref = pooled_iht_oracle([(x.X, x.y) for x in data], hp.R, 0.5, s, hp.C0, hp.T)
        exact += all(np.array_equal(a, b) for a, b in zip(its, ref)) and len(its) == len(ref)
        worst = max(worst, float(np.linalg.norm(res.beta_hat - tm.beta_per_machine[0])))
    elapsed = time.perf_counter() - t0
    ok = exact == 100 and worst < 1e-6 and elapsed < 30
    record(1, ok, f"bit-exact {exact}/100, max final error {worst:.2e}, {elapsed:.1f}s (< 30s)")


# ----------------------------------------------------------------------------- 2

def _brute_top_s(v, s):
    mag = np.abs(v)
    # j is kept iff fewer than s coordinates are strictly larger
    return {j for j in range(v.size) if np.sum(mag > mag[j]) < s}


def test_criterion_2_noisy_ht_oracle():
    rng = Rng(7)
    matches = 0
    for i in range(1000):
        r = rng.child(i)
        d = int(r.generator.integers(1, 65))
        s = int(r.generator.integers(1, d + 1))
        # distinct magnitudes by construction
        v = r.generator.permutation(np.arange(1, d + 1)) * (0.5 + r.uniform())
        v *= np.where(r.uniform(d) < 0.5, -1, 1)
        # epsilon large enough that the noise is below one ulp of the gaps
        out = noisy_hard_threshold(v, s, 1.0, PrivacyBudget(1e300, 1e-6), r.child("ht"))
        got = set(np.flatnonzero(out.value).tolist())
        matches += got == _brute_top_s(v, s)
    record(2, matches == 1000, f"{matches}/1000 selections equal brute-force top-s")


# ----------------------------------------------------------------------------- 3

def test_criterion_3_noise_calibration():
    m, n, d, s = 5, 500, 100, 5
    budget = PrivacyBudget(2.0, 1 / (2 * m * n))
    hp = HyperParams.from_primitives(m, n, d, s, budget, s_star=s, s0=2, s1=3, sigma=0.5,
                                     kappa=0.7, T=10)
    L, k, R, c0, c1 = hp.L, hp.kappa, hp.R, hp.c0, hp.c1
    eps, delta = budget.epsilon, budget.delta
    cx = 3 * math.sqrt(2 * L * k**2 * math.log(d))
    closed = {
        "B0": 2 * (R + math.sqrt(s) * c0 * cx) * cx,
        "B1": 2 * math.sqrt(s) * c1 * cx**2,
        "B2": 4 / (m * n) * (R**2 + s**2 * c0**2 * cx**2),
        "B3": 2 * s * cx**2 / n,
        "B4": 4 * L * math.sqrt(math.log(m)) * cx * (R + c0 * cx * math.sqrt(s)) / math.sqrt(m * n),
        "B5": cx * (2 * R + math.sqrt(3) * c0 * cx),
        "B6": 2 * math.sqrt(s * math.log(n) / n) * cx * c1,
        "Delta1": math.sqrt(s) * c1 * cx * R + s * c0 * c1 * cx**2,
    }
    unit_ok = all(getattr(hp, key) == val for key, val in closed.items())
    unit_ok &= laplace_scale(3.0, 0.5) == 6.0
    unit_ok &= gaussian_std(1.5, budget) == math.sqrt(2 * (1.5 / eps) ** 2 * math.log(1.25 / delta))
    unit_ok &= noisy_ht_scale(0.2, s, budget) == 0.2 * 2 * math.sqrt(3 * s * math.log(1 / delta)) / eps

    # scales actually handed to the mechanisms during a run
    tm, data, hp2, run = _homogeneous_run(1, n, m, 30, 3, 2.0, kappa=0.05, T=4)
    seen: dict[str, list] = {"ht": [], "gauss": [], "lap": [], "max": []}
    real_ht, real_gauss = est_mod.noisy_hard_threshold_columns, est_mod.gaussian_std
    real_lap, real_max = est_mod.sample_laplace, inf_mod.private_max

    def spy_ht(V, s_, lam, b, r):
        seen["ht"].append((lam, s_, b))
        return real_ht(V, s_, lam, b, r)

    def spy_gauss(sens, b):
        seen["gauss"].append((sens, b))
        return real_gauss(sens, b)

    def spy_lap(r, scale, size=None):
        seen["lap"].append(scale)
        return real_lap(r, scale, size)

    def spy_max(v, G, b, scale, r):
        seen["max"].append(scale)
        return real_max(v, G, b, scale, r)

    with mock.patch.object(est_mod, "noisy_hard_threshold_columns", spy_ht), \
            mock.patch.object(est_mod, "gaussian_std", spy_gauss), \
            mock.patch.object(est_mod, "sample_laplace", spy_lap), \
            mock.patch.object(inf_mod, "private_max", spy_max), \
            warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeVarianceWarning)
        res = fed_sparse_regression(run, hp2)
        fed_precision_matrix(run, hp2, columns=[0, 1])
        private_variance(run, res.beta_hat, hp2)
        bootstrap_simultaneous(run, res.beta_hat, np.eye(30), hp2, None, 3, 0.95, Rng(0))
    N = m * n
    step = res.step_size
    lam_reg = [x for x in seen["ht"] if x[1] == 3 and x[2] == hp2.per_round()]
    used_ok = (
        seen["lap"][:2] == [2 * hp2.B3 / hp2.budget.epsilon] * 2
        and lam_reg[0][0] == step * hp2.B0 / N
        and any(x[0] == step * hp2.B1 / N for x in seen["ht"])
        and seen["gauss"] == [(hp2.B2, hp2.budget)]
        and seen["max"] == [noisy_ht_scale(hp2.B4, 1, hp2.budget)] * 3
        and len(lam_reg) >= hp2.T
    )

    # empirical variances over 10^6 draws on the real injection paths
    K = 1_000_000
    released = noisy_hard_threshold_columns(np.zeros((1, K)), 1, step * hp2.B0 / N,
                                            hp2.per_round(), Rng(11)).value[0]
    lap_ratio = np.var(released) / (2 * noisy_ht_scale(step * hp2.B0 / N, 1, hp2.per_round()) ** 2)

    tm, data, hp3, run3 = _homogeneous_run(2, 50, 2, 2, 1, 2.0, kappa=0.05)
    # 10^6 releases compose to delta * 10^6, so this probe uses a tiny delta
    hp3 = hp3.with_(budget=PrivacyBudget(2.0, 1e-9))
    Theta = np.tile(np.eye(2)[:, :1], (1, K))
    cols = np.zeros(K, dtype=int)
    b = np.asarray(tm.beta_per_machine[0])
    noisy = np.array([c.beta_u for c in debias_coordinates(run3, b, Theta, hp3, Rng(12), cols)])
    clean = debias_coordinates(run3, b, Theta[:, :1], hp3.with_(private=False), Rng(12), [0])[0]
    gauss_ratio = np.var(noisy - clean.beta_u) / debias_noise_variance(hp3)

    emp_ok = abs(lap_ratio - 1) < 0.05 and abs(gauss_ratio - 1) < 0.05
    record(3, unit_ok and used_ok and emp_ok,
           f"closed forms {'ok' if unit_ok else 'MISMATCH'}, scales used in runs "
           f"{'ok' if used_ok else 'MISMATCH'}, empirical/declared variance "
           f"Laplace {lap_ratio:.4f}, Gaussian {gauss_ratio:.4f} (within 5%)")


# ----------------------------------------------------------------------------- 4

def test_criterion_4_coverage_calibration():
    t0 = time.perf_counter()
    cfg = ScenarioConfig(**DESK, replications=200, mode="homogeneous", seed=4)
    row = run_scenario(cfg, record_time=False)
    elapsed = time.perf_counter() - t0
    ok = 0.91 <= row.cov <= 0.985 and elapsed < 300
    record(4, ok, f"cov {row.cov:.4f} in [0.91, 0.985] (cov_S {row.cov_S:.3f}, cov_Sc "
                  f"{row.cov_Sc:.3f}, length {row.ci_length_mean:.4f}), {elapsed:.0f}s (< 300s)")


# ----------------------------------------------------------------------------- 5

def _sweep_errors(name, values, reps=50):
    base = dict(n=500, m=5, d=100, s_star=5, eps=2.0)
    out = []
    for v in values:
        kw = {**base, name: v}
        errs = []
        for r in range(reps):
            tm, _, hp, run = _homogeneous_run(r, kw["n"], kw["m"], kw["d"], kw["s_star"], kw["eps"])
            beta = fed_sparse_regression(run, hp).beta_hat
            errs.append(float(np.sum((beta - tm.beta_per_machine[0]) ** 2)))
        out.append(np.array(errs))
    return out


def test_criterion_5_monotone_error_sweeps():
    parts, ok = [], True
    for name, values in (("n", (250, 500, 1000)), ("m", (4, 8, 16)), ("eps", (0.3, 0.8, 2.0))):
        E = _sweep_errors(name, values)
        means = [e.mean() for e in E]
        ps = [binomtest(int(np.sum(E[i] > E[i + 1])), E[i].size, alternative="greater").pvalue
              for i in range(2)]
        ok &= means[0] > means[1] > means[2] and max(ps) < 0.05
        parts.append(f"{name}: " + " > ".join(f"{x:.4g}" for x in means) + f" (max p {max(ps):.1e})")
    record(5, ok, "; ".join(parts))


# ----------------------------------------------------------------------------- 6

TABLE1_ROW = dict(n=4000, m=15, d=800, s_star=15, s0=8, epsilon=0.8)


@pytest.mark.paper_scale
def test_criterion_6_paper_scale():
    row = run_scenario(ScenarioConfig(**TABLE1_ROW, replications=50, seed=6), record_time=False)
    err_ok = 0.0170 - 3 * 0.0032 <= row.est_error_mean <= 0.0170 + 3 * 0.0032
    cov_ok = abs(row.cov - 0.945) <= 0.02
    len_ok = abs(row.ci_length_mean / 0.0437 - 1) <= 0.15
    record(6, err_ok and cov_ok and len_ok,
           f"error {row.est_error_mean:.4f} vs 0.0170+-0.0096, cov {row.cov:.3f} vs 0.945+-0.02, "
           f"length {row.ci_length_mean:.4f} vs 0.0437+-15%")


# ----------------------------------------------------------------------------- 7

def test_criterion_7_simultaneous_pattern():
    cfg = ScenarioConfig(**DESK, replications=100, mode="homogeneous", simultaneous=True, seed=7)
    row = run_scenario(cfg, record_time=False)
    ok = row.cov_Sc >= row.cov >= row.cov_S and row.cov_Sc >= 0.93
    record(7, ok, f"cov_Sc {row.cov_Sc:.4f} >= cov {row.cov:.4f} >= cov_S {row.cov_S:.4f}, "
                  f"cov_Sc >= 0.93 (all-covered rate: all {row.joint_cov['all']:.2f}, "
                  f"S {row.joint_cov['S']:.2f}, Sc {row.joint_cov['Sc']:.2f})")


@pytest.mark.paper_scale
def test_criterion_7_paper_scale_row():
    cfg = ScenarioConfig(**TABLE1_ROW, replications=50, simultaneous=True, seed=7)
    row = run_scenario(cfg, record_time=False)
    ref = (0.985, 0.910, 0.987)
    got = (row.cov, row.cov_S, row.cov_Sc)
    ok = all(abs(g - r) <= 0.03 for g, r in zip(got, ref))
    print(f"criterion  7 (full size): {'PASS' if ok else 'FAIL'}  cov/S/Sc {got} vs {ref} +-0.03")
    assert ok


# ----------------------------------------------------------------------------- 8

def _mean_mse(m, eps, reps=200, d=32, s=4, n=16, signal=0.25, seed=8):
    mu = np.zeros(d)
    mu[:s] = signal
    # every machine reports one uniformly sampled coordinate at full budget
    errs = []
    for r in range(reps):
        B = simulate_reports(mu, m, n, eps, Rng(seed).child(m, r), k_sub=d)
        errs.append(np.sum((aggregate_mean(B, n, eps, k_sub=d).mu_hat - mu) ** 2))
    return float(np.mean(errs))


def test_criterion_8_untrusted_mean_rates():
    t0 = time.perf_counter()
    eps_grid = (0.25, 0.5, 1.0, 2.0)
    # m is left open for the slope; m=4096 keeps every epsilon out of the clamp
    mses = [_mean_mse(4096, e) for e in eps_grid]
    slope = float(np.polyfit(np.log(eps_grid), np.log(mses), 1)[0])
    ratio = _mean_mse(256, 1.0) / _mean_mse(64, 1.0)
    elapsed = time.perf_counter() - t0
    ok = abs(slope + 2) <= 0.4 and 0.17 <= ratio <= 0.37 and elapsed < 120
    record(8, ok, f"eps slope {slope:.3f} (target -2+-0.4, m=4096); MSE(256)/MSE(64) at eps=1 "
                  f"{ratio:.3f} (target [0.17, 0.37]); {elapsed:.0f}s")


# ----------------------------------------------------------------------------- 9

def test_criterion_9_normality():
    n, m, d, s = 300, 5, 50, 4
    Z = []
    for r in range(300):
        tm, data, hp, run = _homogeneous_run(r, n, m, d, s, 1.0, private=False)
        beta = np.asarray(tm.beta_per_machine[0])
        ks = [int(np.flatnonzero(beta)[0]), int(np.flatnonzero(beta == 0)[0])]
        b = fed_sparse_regression(run, hp).beta_hat
        theta = fed_precision_matrix(run, hp, columns=ks).theta_hat
        sigma = sigma_from_variance(private_variance(run, b, hp))
        dcs = debias_coordinates(run, b, theta, hp, Rng(r), ks)
        Z.append([math.sqrt(m * n) * (c.beta_u - beta[c.k]) / (sigma * math.sqrt(c.plug_in_var))
                  for c in dcs])
    Z = np.array(Z)
    p = [kstest(Z[:, j], "norm").pvalue for j in range(2)]
    record(9, min(p) > 0.01, f"KS p-values {p[0]:.3f} (support coordinate), {p[1]:.3f} "
                             f"(null coordinate), both > 0.01 over 300 replications")


# ----------------------------------------------------------------------------- 10

def test_criterion_10_data_locality():
    allowed = {k.value for k in PayloadKind}
    kinds = {key.split(":", 1)[1] for key in MESSAGE_KINDS}
    raw = [k for k in kinds if "raw" in k or "sample" in k]
    total = sum(MESSAGE_KINDS.values())
    ok = total > 0 and kinds <= allowed and not raw
    summary = ", ".join(f"{k}={v}" for k, v in sorted(MESSAGE_KINDS.items()))
    record(10, ok, f"{total} logged messages, kinds within the payload whitelist, no raw-sample "
                   f"kinds ({summary})")


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_") and not hasattr(fn, "pytestmark"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
