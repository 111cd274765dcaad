"""Private federated sparse regression and how its error moves with the budget.

Run: python3 demos/03_private_regression.py
"""

import warnings

import numpy as np

from fedspar.dp_core import PrivacyBudget, Rng
from fedspar.estimators import fed_sparse_regression, private_variance
from fedspar.fednet import FederatedRun
from fedspar.model import HyperParams, make_true_model, sample_federation

m, n, d, s = 5, 500, 100, 5
rng = Rng(11)
truth = make_true_model(m, d, s, 0, 0.5, rng.child("model"), homogeneous=True)
beta = truth.beta_per_machine[0]
data = sample_federation(truth, n, rng.child("data"))
print(f"true support: {np.flatnonzero(beta).tolist()}")

for eps in (0.3, 0.8, 2.0, None):
    private = eps is not None
    hp = HyperParams.from_primitives(m, n, d, s, PrivacyBudget(eps or 1.0, 1 / (2 * m * n)),
                                     s_star=s, R=4.0, kappa=0.002, private=private)
    run = FederatedRun(data, hp, rng.child("run", str(eps)))
    est = fed_sparse_regression(run, hp)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s2 = private_variance(run, est.beta_hat, hp)
    label = f"eps={eps}" if private else "no privacy"
    print(f"{label:>10}: squared error {np.sum((est.beta_hat - beta) ** 2):.5f}, "
          f"support {np.flatnonzero(est.beta_hat).tolist()}, noise variance estimate {s2:.3f}")
