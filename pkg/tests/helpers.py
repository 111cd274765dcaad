import numpy as np

from fedspar.dp_core import PrivacyBudget, Rng
from fedspar.fednet import FederatedRun
from fedspar.model import HyperParams, make_true_model, sample_federation


def homogeneous_setup(seed, n=200, m=4, d=30, s_star=3, sigma=0.5, eps=2.0, private=True,
                      kappa=0.002, R=4.0, T=30, eta=None, covariance=None, trusted=True):
    rng = Rng(seed)
    tm = make_true_model(m, d, s_star, 0, sigma, rng.child("model"), covariance=covariance,
                         homogeneous=True)
    data = sample_federation(tm, n, rng.child("data"))
    hp = HyperParams.from_primitives(m, n, d, s_star, PrivacyBudget(eps, 1 / (2 * m * n)),
                                     s_star=s_star, R=R, kappa=kappa, T=T, eta=eta,
                                     private=private)
    run = FederatedRun(data, hp, rng.child("run"), trusted=trusted)
    return tm, data, hp, run


def beta_of(tm):
    return np.asarray(tm.beta_per_machine[0])


def pooled_iht_oracle(blocks, R, step, s, radius, T, start=None):
    """Plain IHT on the pooled data, written without the package's federation code.

    ``blocks`` is a list of (X, y) pairs in machine order. Each step averages
    the per-block gradients ``X^T (X b - clip(y)) / n`` in block order, keeps
    the ``s`` largest magnitudes (lowest index on ties) and clamps to the box.
    Returns the list of iterates.
    """
    d = blocks[0][0].shape[1]
    m = len(blocks)
    b = np.zeros(d) if start is None else np.array(start, dtype=float)
    out = []
    for _ in range(T):
        total = None
        for X, y in blocks:
            g = X.T @ (X @ b - np.clip(y, -R, R)) / X.shape[0]
            total = g if total is None else total + g
        half = b - (step / m) * total
        keep = np.argsort(-np.abs(half), kind="stable")[:s]
        nxt = np.zeros(d)
        nxt[keep] = half[keep]
        b = np.clip(nxt, -radius, radius)
        out.append(b)
    return out
