"""Privacy building blocks: budgets, noise scales and private top-s selection.

Run: python3 demos/01_privacy_primitives.py
"""

import numpy as np

from fedspar.dp_core import (
    PrivacyBudget,
    Rng,
    compose,
    gaussian_std,
    noisy_hard_threshold,
    noisy_ht_scale,
    private_max,
    split,
)

budget = PrivacyBudget(epsilon=1.0, delta=1e-5)
print(f"total budget: {budget}")

# Iterative algorithms spend the budget round by round; basic composition adds up.
rounds = split(budget, 10)
print(f"per-round share: {rounds[0]}  (the 10 shares compose back to {compose(*rounds)})")

# The Gaussian mechanism's noise grows with the sensitivity and shrinks with epsilon.
for eps in (0.5, 1.0, 2.0):
    print(f"  Gaussian std for sensitivity 1 at eps={eps}: {gaussian_std(1.0, PrivacyBudget(eps, 1e-5)):.3f}")

# Noisy hard thresholding keeps s coordinates chosen with Laplace-perturbed magnitudes.
v = np.array([0.1, -3.0, 0.2, 2.5, 0.05, -0.3, 1.8, 0.0])
print(f"\nvector: {v}")
for lam in (0.0, 0.05, 0.5):
    out = noisy_hard_threshold(v, 3, lam, budget, Rng(0))
    scale = noisy_ht_scale(lam, 3, budget)
    print(f"  lam={lam:<4} Laplace scale {scale:7.3f}  kept {np.flatnonzero(out.value).tolist()}"
          f"  released {np.round(out.value[np.flatnonzero(out.value)], 2).tolist()}")

# The private max is the s = 1 case, optionally restricted to an index set.
sel = private_max(v, [0, 2, 5, 6], budget, 0.1, Rng(1))
print(f"\nprivate max over {{0, 2, 5, 6}}: index {sel.index}, released value {sel.noisy_value:.3f}")
