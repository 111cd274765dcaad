"""Mean estimation when the server itself is not trusted.

Every machine randomizes its own report, so the server only sees noisy bits.

Run: python3 demos/07_untrusted_mean.py
"""

import numpy as np

from fedspar.dp_core import Rng
from fedspar.fednet import FederatedRun
from fedspar.untrusted_mean import aggregate_mean, flip_probability, mean_datasets, run_untrusted_mean, simulate_reports

d, s, n = 16, 3, 16
mu = np.zeros(d)
mu[:s] = 0.3

data = mean_datasets(mu, 4000, n, Rng(51))
run = FederatedRun(data, None, Rng(52), trusted=False)
# each machine reports one random coordinate with its whole budget
est = run_untrusted_mean(run, epsilon=2.0, k_sub=d)
print("4000 machines, eps=2, one randomly chosen coordinate per report")
print(f"  estimate of the first 5 coordinates: {np.round(est.mu_hat[:5], 3).tolist()} (truth 0.3, 0.3, 0.3, 0, 0)")
print(f"  message kinds seen by the server: {sorted({e.kind.value for e in run.log})}")

print("\nsquared error as machines and budget grow (one coordinate per report, 50 repetitions):")
for m in (256, 1024, 4096):
    row = []
    for eps in (0.5, 1.0, 2.0):
        errs = [np.sum((aggregate_mean(simulate_reports(mu, m, n, eps, Rng(m).child(r), d), n, eps, d).mu_hat - mu) ** 2)
                for r in range(50)]
        row.append(f"eps={eps}: {np.mean(errs):.4f}")
    print(f"  m={m:5d}  " + "  ".join(row))
print(f"\nflip probability at eps=ln 3: {flip_probability(np.log(3)):.3f}")
