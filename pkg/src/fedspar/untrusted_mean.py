"""Sparse Gaussian mean estimation when the server is untrusted.

Each machine reduces its samples to the signs of its sample mean and sends
them through randomized response. Since ``P(mean_j > 0) = Phi(sqrt(n) mu_j)``,
the server recovers ``mu_j = sqrt(2/n) erfinv(v_j)`` from the debiased sign
average ``v_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf, erfinv

from .dp_core import InvalidArgument, PrivacyBudget, Released, Rng
from .fednet import FederatedRun, LocalView, PayloadKind, round_gather
from .model import MachineDataset

__all__ = [
    "SignVector",
    "MeanEstimate",
    "flip_probability",
    "clamp_margin",
    "sign_vector",
    "local_sign_report",
    "aggregate_mean",
    "run_untrusted_mean",
    "simulate_reports",
    "mean_datasets",
    "bernoulli_mean",
]


@dataclass(frozen=True)
class SignVector:
    z: np.ndarray
    machine_id: int

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 1 or not np.all(np.abs(z) == 1):
            raise InvalidArgument("sign vector entries must be exactly +1 or -1")


@dataclass(frozen=True)
class MeanEstimate:
    mu_hat: np.ndarray
    v_hat: np.ndarray
    epsilon: float
    n: int
    clamp: float

    def recompute(self) -> np.ndarray:
        return math.sqrt(2.0 / self.n) * erfinv(self.v_hat)


def flip_probability(eps_coord: float) -> float:
    """``1 / (1 + e^eps)``; zero for infinite budget."""
    if eps_coord <= 0:
        raise InvalidArgument("per-coordinate epsilon must be positive")
    if math.isinf(eps_coord):
        return 0.0
    return 1.0 / (1.0 + math.exp(eps_coord))


def clamp_margin(m: int) -> float:
    """``1 / (2 sqrt(m))``."""
    return 0.5 / math.sqrt(m)


def _coords_per_report(d: int, k_sub: int) -> int:
    if not 1 <= k_sub <= d:
        raise InvalidArgument(f"k_sub must lie in [1, d={d}], got {k_sub}")
    return math.ceil(d / k_sub)


def sign_vector(data: MachineDataset) -> SignVector:
    """Coordinate-wise signs of the sample mean (zeros map to +1)."""
    mean = data.X.mean(axis=0)
    return SignVector(np.where(mean >= 0, 1.0, -1.0), data.machine_id)


def _privatize(z: np.ndarray, coords: np.ndarray, eps_coord: float, u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    flip = u < flip_probability(eps_coord)
    out[coords] = np.where(flip, -z[coords], z[coords])
    return out


def local_sign_report(view: LocalView | MachineDataset, rng: Rng, epsilon: float,
                      k_sub: int = 1) -> Released:
    """Randomized-response report of the sample-mean signs.

    ``ceil(d / k_sub)`` coordinates are sampled uniformly without replacement
    and each is reported with budget ``epsilon / ceil(d / k_sub)``; the rest
    are sent as 0. The payload is a length-d vector over ``{-1, 0, +1}``.
    """
    data = view.data if isinstance(view, LocalView) else view
    d = data.d
    c = _coords_per_report(d, k_sub)
    eps_coord = epsilon / c
    r = rng.child("report", data.machine_id)
    coords = np.sort(r.generator.choice(d, size=c, replace=False)) if c < d else np.arange(d)
    z = sign_vector(data).z
    bits = _privatize(z, coords, eps_coord, r.uniform(c))
    spent = PrivacyBudget(eps_coord, 0.0).scaled(c)
    return Released(bits, spent, "randomized_response")


def aggregate_mean(messages: Sequence, n: int, epsilon: float, k_sub: int = 1,
                   top_s: int | None = None) -> MeanEstimate:
    """Debias the reports, clamp to ``[-1 + k, 1 - k]`` with ``k = 1/(2 sqrt(m))``, invert.

    ``top_s`` optionally keeps only the ``top_s`` largest magnitudes of the result.
    """
    if len(messages) == 0:
        raise InvalidArgument("need at least one message")
    B = np.stack([np.asarray(getattr(msg, "payload", msg), dtype=float) for msg in messages])
    m, d = B.shape
    c = _coords_per_report(d, k_sub)
    eps_coord = epsilon / c
    shrink = 1.0 - 2.0 * flip_probability(eps_coord)
    counts = np.count_nonzero(B, axis=0)
    sums = B.sum(axis=0)
    v = np.divide(sums, counts * shrink, out=np.zeros(d), where=counts > 0)
    kc = clamp_margin(m)
    v = np.clip(v, -1.0 + kc, 1.0 - kc)
    mu = math.sqrt(2.0 / n) * erfinv(v)
    if top_s is not None:
        if not 0 <= top_s <= d:
            raise InvalidArgument("top_s must lie in [0, d]")
        keep = np.argsort(-np.abs(mu), kind="stable")[:top_s]
        mask = np.zeros(d, dtype=bool)
        mask[keep] = True
        mu = np.where(mask, mu, 0.0)
    return MeanEstimate(mu, v, float(epsilon), int(n), kc)


def run_untrusted_mean(run: FederatedRun, epsilon: float, k_sub: int = 1,
                       top_s: int | None = None) -> MeanEstimate:
    """One untrusted-server round: every machine sends one privatized report."""
    if run.trusted:
        raise InvalidArgument("the sign protocol expects an untrusted-server run")
    sizes = set(run.sizes)
    if len(sizes) != 1:
        raise InvalidArgument("all machines must hold the same number of samples")
    run.next_round()
    msgs = round_gather(run, lambda view: local_sign_report(view, run.rng, epsilon, k_sub),
                        PayloadKind.PRIVATIZED_BITS)
    run.record_spend("untrusted_mean", PrivacyBudget(epsilon, 0.0))
    return aggregate_mean(msgs, sizes.pop(), epsilon, k_sub, top_s)


def mean_datasets(mu: np.ndarray, m: int, n: int, rng: Rng) -> list[MachineDataset]:
    """``m`` machines holding ``n`` draws of ``N(mu, I)`` each (responses set to 0)."""
    mu = np.asarray(mu, dtype=float)
    out = []
    for i in range(m):
        X = mu + rng.child("mean_data", i).normal((n, mu.size))
        out.append(MachineDataset(X, np.zeros(n), i))
    return out


def simulate_reports(mu: np.ndarray, m: int, n: int, epsilon: float, rng: Rng,
                     k_sub: int = 1) -> np.ndarray:
    """Vectorized draw of all ``m`` reports for Monte-Carlo probes.

    Sample means are drawn directly from ``N(mu, I/n)``, which has the same
    law as averaging ``n`` samples; coordinate sampling and flips follow
    :func:`local_sign_report`.
    """
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    c = _coords_per_report(d, k_sub)
    g = rng.generator
    means = mu + g.standard_normal((m, d)) / math.sqrt(n)
    z = np.where(means >= 0, 1.0, -1.0)
    if c < d:
        keys = g.random((m, d))
        coords = np.argsort(keys, axis=1)[:, :c]
        mask = np.zeros((m, d), dtype=bool)
        np.put_along_axis(mask, coords, True, axis=1)
    else:
        mask = np.ones((m, d), dtype=bool)
    flip = g.random((m, d)) < flip_probability(epsilon / c)
    return np.where(mask, np.where(flip, -z, z), 0.0)


def bernoulli_mean(mu: np.ndarray, n: int) -> np.ndarray:
    """``erf(sqrt(n) mu / sqrt(2))``, the mean of the sign of a sample mean."""
    return erf(math.sqrt(n) * np.asarray(mu, dtype=float) / math.sqrt(2.0))
