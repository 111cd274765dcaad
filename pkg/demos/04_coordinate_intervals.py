"""Debiased estimates and coordinate-wise confidence intervals.

Run: python3 demos/04_coordinate_intervals.py
"""

import numpy as np

from fedspar.dp_core import PrivacyBudget, Rng
from fedspar.estimators import estimate_restricted_eigenvalues, fed_precision_matrix, fed_sparse_regression, private_variance
from fedspar.fednet import FederatedRun
from fedspar.inference import ci_general, ci_simple, debias_coordinates, sigma_from_variance
from fedspar.model import HyperParams, make_true_model, sample_federation

m, n, d, s = 5, 500, 40, 4
rng = Rng(21)
truth = make_true_model(m, d, s, 0, 0.5, rng.child("model"), homogeneous=True)
beta = truth.beta_per_machine[0]
data = sample_federation(truth, n, rng.child("data"))
hp = HyperParams.from_primitives(m, n, d, s, PrivacyBudget(2.0, 1 / (2 * m * n)), s_star=s,
                                 R=4.0, kappa=0.002)
run = FederatedRun(data, hp, rng.child("run"))

est = fed_sparse_regression(run, hp)
prec = fed_precision_matrix(run, hp)
sigma = sigma_from_variance(private_variance(run, est.beta_hat, hp))
debiased = debias_coordinates(run, est.beta_hat, prec.theta_hat, hp, rng.child("debias"))
eigen = estimate_restricted_eigenvalues(run, hp)

show = sorted(set(np.flatnonzero(beta).tolist()) | {0, 1})
print(f"{'k':>3} {'truth':>8} {'IHT':>8} {'debiased':>9}   simple interval      general interval")
for k in show:
    dc = debiased[k]
    a = ci_simple(dc, sigma, 0.05, m * n)
    b = ci_general(dc, sigma, eigen, hp, 0.05, m, n)
    print(f"{k:3d} {beta[k]:8.3f} {est.beta_hat[k]:8.3f} {dc.beta_u:9.3f}   "
          f"[{a.lower:.3f}, {a.upper:.3f}]   [{b.lower:.3f}, {b.upper:.3f}]")

covered = np.mean([ci_simple(dc, sigma, 0.05, m * n).covers(beta[dc.k]) for dc in debiased])
print(f"\nshare of the {d} simple intervals that contain the truth: {covered:.3f}")
print("the general interval adds a conservative allowance for privacy bias, so it is much wider")
