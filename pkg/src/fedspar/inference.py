"""Private inference: debiasing, coordinate-wise intervals and bootstrap bands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.stats import norm

from .dp_core import (
    InvalidArgument,
    PrivacyBudget,
    Released,
    Rng,
    gaussian_std,
    noisy_ht_scale,
    private_max,
    truncate,
)
from .estimators import EigenEstimate
from .fednet import FederatedRun, LocalView, PayloadKind, aggregate, round_broadcast, round_gather
from .model import HyperParams

__all__ = [
    "DegenerateEigenFault",
    "DebiasedCoordinate",
    "IntervalEstimate",
    "BootstrapQuantile",
    "SIGMA2_FLOOR",
    "sigma_from_variance",
    "debias_noise_variance",
    "hetero_noise_variance",
    "debias_coordinates",
    "debias_coordinate",
    "ci_simple",
    "ci_general",
    "privacy_bias_term",
    "hetero_a_term",
    "hetero_debias",
    "hetero_debias_ci",
    "type1_quantile",
    "bootstrap_simultaneous",
    "hetero_bootstrap",
    "simultaneous_band",
]

SIGMA2_FLOOR = 1e-8


class DegenerateEigenFault(ArithmeticError):
    """The smallest restricted-eigenvalue estimate is not positive."""


@dataclass(frozen=True)
class DebiasedCoordinate:
    k: int
    beta_u: float
    privacy_noise_var: float
    plug_in_var: float


@dataclass(frozen=True)
class IntervalEstimate:
    k: int | tuple[int, ...]
    lower: float | np.ndarray
    upper: float | np.ndarray
    level: float
    kind: str

    @property
    def center(self):
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2

    @property
    def half_width(self):
        return (np.asarray(self.upper) - np.asarray(self.lower)) / 2

    def covers(self, truth) -> np.ndarray | bool:
        t = np.asarray(truth)
        return (np.asarray(self.lower) <= t) & (t <= np.asarray(self.upper))


@dataclass(frozen=True)
class BootstrapQuantile:
    alpha: float
    c_u: float
    q: int
    draws: np.ndarray
    budget_spent: PrivacyBudget | None = None


def sigma_from_variance(sigma2: float) -> float:
    """Square root of a private variance estimate floored at ``SIGMA2_FLOOR``."""
    return math.sqrt(max(float(sigma2), SIGMA2_FLOOR))


def _check_alpha(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


def debias_noise_variance(hyper: HyperParams, total_n: int | None = None) -> float:
    """``8 Delta1^2 log(1.25/delta) / (n^2 m^2 eps^2)``, the variance of the debiasing noise."""
    if not hyper.private:
        return 0.0
    N = hyper.m * hyper.n if total_n is None else total_n
    return gaussian_std(2.0 * hyper.Delta1 / N, hyper.budget) ** 2


def hetero_noise_variance(hyper: HyperParams, n: int | None = None) -> float:
    """``8 Delta1^2 log(1.25/delta) / (n^2 eps^2)`` for single-machine debiasing."""
    if not hyper.private:
        return 0.0
    n = hyper.n if n is None else n
    return gaussian_std(2.0 * hyper.Delta1 / n, hyper.budget) ** 2


def _broadcast_theta(run: FederatedRun, Theta: np.ndarray) -> None:
    round_broadcast(run, Released(np.asarray(Theta, dtype=float), None, "precision_estimate"))


def debias_coordinates(run: FederatedRun, beta_hat, Theta, hyper: HyperParams, rng: Rng,
                       columns: Sequence[int] | None = None) -> list[DebiasedCoordinate]:
    """Debiased estimates for several coordinates at once.

    ``Theta`` is d x K with column ``j`` estimating precision column
    ``columns[j]``. Machines send gradients at ``beta_hat`` (truncated
    responses) and the quadratic forms ``theta^T Sigma_i theta``; the server
    forms ``beta_k - theta_k^T mean(g_i) + E_k`` with independent Gaussian
    ``E_k``.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    if Theta.ndim == 1:
        Theta = Theta[:, None]
    d = run.d
    if beta_hat.shape != (d,) or Theta.shape[0] != d:
        raise InvalidArgument("dimension mismatch between data, beta_hat and Theta")
    cols = np.arange(Theta.shape[1]) if columns is None else np.asarray(columns, dtype=np.intp)
    if cols.shape != (Theta.shape[1],):
        raise InvalidArgument("need one column index per Theta column")
    R = hyper.R

    round_broadcast(run, Released(beta_hat, None, "estimate"))

    def grad(view: LocalView) -> np.ndarray:
        b = view.last_broadcast
        return view.X.T @ (view.X @ b - truncate(view.y, R)) / view.n

    run.next_round()
    g_bar = aggregate(round_gather(run, grad)) / run.m

    _broadcast_theta(run, Theta)

    def quad(view: LocalView) -> np.ndarray:
        Th = view.last_broadcast
        return np.einsum("dk,de,ek->k", Th, view.gram(), Th)

    run.next_round()
    plug = aggregate(round_gather(run, quad, PayloadKind.QUADRATIC_FORM)) / run.m

    N = int(sum(run.sizes))
    var = debias_noise_variance(hyper, N)
    E = math.sqrt(var) * rng.child("debias").normal(cols.size) if var > 0 else np.zeros(cols.size)
    beta_u = beta_hat[cols] - Theta.T @ g_bar + E
    if hyper.private:
        run.record_spend("debias", hyper.budget.scaled(cols.size))
    return [DebiasedCoordinate(int(k), float(bu), var, float(max(p, 0.0)))
            for k, bu, p in zip(cols, beta_u, plug)]


def debias_coordinate(run: FederatedRun, beta_hat, theta_hat_k, hyper: HyperParams, rng: Rng,
                      k: int) -> DebiasedCoordinate:
    """One-step debiased estimate of coordinate ``k``."""
    theta = np.asarray(theta_hat_k, dtype=float)
    if theta.ndim != 1:
        raise InvalidArgument("theta_hat_k must be a vector")
    return debias_coordinates(run, beta_hat, theta[:, None], hyper, rng, [k])[0]


def privacy_bias_term(eigen: EigenEstimate, hyper: HyperParams, s: int | None = None,
                      total_n: int | None = None) -> float:
    """``gamma mu^2 / nu^2 * s^2 log^2 d log(1/delta) log^3(mn) / (m^2 n^2 eps^2)``."""
    if not hyper.private:
        return 0.0
    if not eigen.nu_s_hat > 0:
        raise DegenerateEigenFault(f"smallest restricted eigenvalue estimate {eigen.nu_s_hat} <= 0")
    s = hyper.s if s is None else s
    N = hyper.m * hyper.n if total_n is None else total_n
    eps, delta, d = hyper.budget.epsilon, hyper.budget.delta, hyper.d
    mu, nu = eigen.mu_s_hat, eigen.nu_s_hat
    rate = s**2 * math.log(d) ** 2 * math.log(1 / delta) * math.log(N) ** 3 / (N**2 * eps**2)
    return hyper.gamma_at(mu) * mu**2 / nu**2 * rate


def _interval(k, center, half, alpha, kind) -> IntervalEstimate:
    return IntervalEstimate(k, center - half, center + half, 1 - alpha, kind)


def ci_simple(dc: DebiasedCoordinate, sigma_hat: float, alpha: float, mn: int) -> IntervalEstimate:
    """``beta_u -+ z_{1-alpha/2} sigma_hat / sqrt(mn) sqrt(theta^T Sigma theta)``.

    Valid when the privacy cost is negligible next to the statistical error.
    """
    alpha = _check_alpha(alpha)
    z = norm.ppf(1 - alpha / 2)
    half = z * sigma_hat / math.sqrt(mn) * math.sqrt(dc.plug_in_var)
    return _interval(dc.k, dc.beta_u, half, alpha, "simple")


def ci_general(dc: DebiasedCoordinate, sigma_hat: float, eigen: EigenEstimate,
               hyper: HyperParams, alpha: float, m: int, n: int) -> IntervalEstimate:
    """Interval that also carries the privacy bias and the debiasing-noise variance."""
    alpha = _check_alpha(alpha)
    z = norm.ppf(1 - alpha / 2)
    N = m * n
    bias = privacy_bias_term(eigen, hyper, total_n=N)
    extra = 0.0
    if hyper.private:
        eps, delta = hyper.budget.epsilon, hyper.budget.delta
        extra = 8 * hyper.Delta1**2 * math.log(1 / delta) / (N * eps**2)
    half = bias + z * sigma_hat / math.sqrt(N) * math.sqrt(dc.plug_in_var + extra)
    return _interval(dc.k, dc.beta_u, half, alpha, "general")


def hetero_a_term(eigen: EigenEstimate, hyper: HyperParams) -> float:
    """Bias allowance for heterogeneous intervals: shared part at rate mn, local part at rate n."""
    if not hyper.private:
        return 0.0
    if not eigen.nu_s_hat > 0:
        raise DegenerateEigenFault(f"smallest restricted eigenvalue estimate {eigen.nu_s_hat} <= 0")
    m, n, d = hyper.m, hyper.n, hyper.d
    eps, delta = hyper.budget.epsilon, hyper.budget.delta
    mu, nu = eigen.mu_s_hat, eigen.nu_s_hat
    lead = 2 * hyper.gamma_at(mu) * mu**2 / nu**2
    common = math.log(d) ** 2 * math.log(1 / delta)
    shared = hyper.s1**2 * common * math.log(m * n) ** 3 / (m**2 * n**2 * eps**2)
    local = hyper.s0**2 * common * math.log(n) ** 3 / (n**2 * eps**2)
    return lead * (shared + local)


def hetero_debias(run: FederatedRun, i: int, beta_hat_i, Theta, hyper: HyperParams, rng: Rng,
                  columns: Sequence[int] | None = None) -> list[DebiasedCoordinate]:
    """Single-machine debiasing on machine ``i`` (runs entirely locally).

    ``beta_k + (1/n) sum_j (theta^T x_j clip(y_j, R) - theta^T x_j x_j^T beta) + E3``;
    the plug-in variance uses machine ``i``'s own Gram matrix.
    """
    Theta = np.asarray(Theta, dtype=float)
    if Theta.ndim == 1:
        Theta = Theta[:, None]
    b = np.asarray(beta_hat_i, dtype=float)
    cols = np.arange(Theta.shape[1]) if columns is None else np.asarray(columns, dtype=np.intp)
    R = hyper.R
    mc = run.machines[i]
    var = hetero_noise_variance(hyper, mc.n)
    noise_rng = rng.child("hetero_debias", mc.machine_id)

    def local(view: LocalView):
        corr = Theta.T @ (view.X.T @ (truncate(view.y, R) - view.X @ b)) / view.n
        plug = np.einsum("dk,de,ek->k", Theta, view.gram(), Theta)
        E = math.sqrt(var) * noise_rng.normal(cols.size) if var > 0 else np.zeros(cols.size)
        return b[cols] + corr + E, plug

    beta_u, plug = mc.run(local)
    return [DebiasedCoordinate(int(k), float(bu), var, float(max(p, 0.0)))
            for k, bu, p in zip(cols, beta_u, plug)]


def hetero_debias_ci(dc: DebiasedCoordinate, sigma_hat: float, eigen: EigenEstimate | None,
                     hyper: HyperParams, alpha: float, n: int | None = None,
                     kind: Literal["hetero", "hetero_simple"] = "hetero") -> IntervalEstimate:
    """Interval for one machine's coefficient.

    ``kind="hetero"``: ``beta_u -+ [a + z sigma_hat / sqrt(n) sqrt(theta^T Sigma theta + 8 Delta1^2 log(1/delta) / (n eps^2))]``.
    ``kind="hetero_simple"``: drops ``a`` and the privacy variance.
    """
    alpha = _check_alpha(alpha)
    n = hyper.n if n is None else n
    z = norm.ppf(1 - alpha / 2)
    if kind == "hetero_simple":
        half = z * sigma_hat / math.sqrt(n) * math.sqrt(dc.plug_in_var)
        return _interval(dc.k, dc.beta_u, half, alpha, kind)
    if kind != "hetero":
        raise InvalidArgument(f"unknown interval kind {kind!r}")
    if eigen is None:
        raise InvalidArgument("the heterogeneous interval needs restricted-eigenvalue estimates")
    a = hetero_a_term(eigen, hyper)
    extra = 0.0
    if hyper.private:
        eps, delta = hyper.budget.epsilon, hyper.budget.delta
        extra = 8 * hyper.Delta1**2 * math.log(1 / delta) / (n * eps**2)
    half = a + z * sigma_hat / math.sqrt(n) * math.sqrt(dc.plug_in_var + extra)
    return _interval(dc.k, dc.beta_u, half, alpha, kind)


def type1_quantile(draws, alpha: float) -> float:
    """Order statistic ``ceil(alpha * q)`` (1-based) of the ascending draws."""
    alpha = _check_alpha(alpha)
    x = np.sort(np.asarray(draws, dtype=float))
    if x.size == 0:
        raise InvalidArgument("no draws")
    idx = max(math.ceil(alpha * x.size), 1) - 1
    return float(x[idx])


def _index_set(G, d: int) -> np.ndarray:
    idx = np.arange(d) if G is None else np.asarray(list(G), dtype=np.intp)
    if idx.size == 0:
        raise InvalidArgument("index set G must be nonempty")
    if idx.min() < 0 or idx.max() >= d:
        raise InvalidArgument("G contains invalid coordinates")
    return idx


def bootstrap_simultaneous(run: FederatedRun, beta_hat, theta_hat_all, hyper: HyperParams,
                           G, q: int, alpha: float, rng: Rng, *,
                           centered: bool = False) -> BootstrapQuantile:
    """Private multiplier-bootstrap quantile for ``max_{k in G} |sqrt(mn)(beta_u_k - beta_k)|``.

    Default (``centered=False``): each machine draws ``n`` standard normals
    ``e_ij`` per iteration and sends ``u_i = n^{-1/2} sum_j Theta x_ij e_ij``;
    the server privately selects the largest ``|m^{-1/2} sum_i u_i|`` over
    ``G`` with PrivateMax at noise level ``B4``. ``centered=True`` instead
    uses one multiplier per machine on centered gradients
    ``sqrt(n) Theta (g_i - g_bar)``.

    ``alpha`` is the quantile level; for a ``1 - a`` band pass ``1 - a``.
    """
    alpha = _check_alpha(alpha)
    if q < 1:
        raise InvalidArgument("q must be >= 1")
    d = run.d
    idx = _index_set(G, d)
    Th = np.asarray(theta_hat_all, dtype=float)
    if Th.shape != (d, d):
        raise InvalidArgument("theta_hat_all must be d x d (column k estimates Theta_k)")
    budget = hyper.budget
    scale = noisy_ht_scale(hyper.B4, 1, budget) if hyper.private else 0.0
    # fail before any round if q releases would exhaust delta
    spent = budget.scaled(q) if hyper.private else None
    m = run.m
    _broadcast_theta(run, Th)
    draws = np.empty(q)
    boot_rng = rng.child("bootstrap")
    if centered:
        b = np.asarray(beta_hat, dtype=float)
        R = hyper.R

        def score(view: LocalView) -> np.ndarray:
            g = view.X.T @ (view.X @ b - truncate(view.y, R)) / view.n
            return math.sqrt(view.n) * (view.last_broadcast.T @ g)

        run.next_round()
        msgs = round_gather(run, score, PayloadKind.BOOTSTRAP_VECTOR)
        S = np.stack([msg.payload for msg in sorted(msgs, key=lambda mm: mm.machine_id)])
        S = S - S.mean(axis=0)
        for t in range(q):
            e = boot_rng.child("multipliers", t).normal(m)
            w = (e @ S) / math.sqrt(m)
            sel = private_max(w, idx, budget, scale, boot_rng.child("max", t))
            draws[t] = abs(sel.noisy_value)
    else:
        for t in range(q):
            def local(view: LocalView, t=t) -> np.ndarray:
                e = boot_rng.child("e", t, view.machine_id).normal(view.n)
                return view.last_broadcast.T @ (view.X.T @ e) / math.sqrt(view.n)

            run.next_round()
            msgs = round_gather(run, local, PayloadKind.BOOTSTRAP_VECTOR)
            w = aggregate(msgs) / math.sqrt(m)
            sel = private_max(w, idx, budget, scale, boot_rng.child("max", t))
            draws[t] = abs(sel.noisy_value)
    if spent is not None:
        run.record_spend("bootstrap", spent)
    return BootstrapQuantile(alpha, type1_quantile(draws, alpha), q, draws, spent)


def hetero_bootstrap(run: FederatedRun, i: int, theta_hat_all, sigma_hat: float,
                     hyper: HyperParams, G, q: int, alpha: float, rng: Rng) -> BootstrapQuantile:
    """Bootstrap quantile on machine ``i`` alone, PrivateMax at noise level ``B6``.

    ``U_t = |PrivateMax([sigma_hat n^{-1/2} sum_j Theta x_j e_j]_G)|``. The band
    is ``beta_u -+ C_U / sqrt(n)``.
    """
    alpha = _check_alpha(alpha)
    if q < 1:
        raise InvalidArgument("q must be >= 1")
    d = run.d
    idx = _index_set(G, d)
    Th = np.asarray(theta_hat_all, dtype=float)
    if Th.shape != (d, d):
        raise InvalidArgument("theta_hat_all must be d x d")
    budget = hyper.budget
    scale = noisy_ht_scale(hyper.B6, 1, budget) if hyper.private else 0.0
    mc = run.machines[i]
    boot_rng = rng.child("hetero_bootstrap", mc.machine_id)

    def local(view: LocalView) -> np.ndarray:
        out = np.empty(q)
        ThX = view.X @ Th  # row j is (Theta x_j)^T
        for t in range(q):
            e = boot_rng.child("e", t).normal(view.n)
            w = sigma_hat * (ThX.T @ e) / math.sqrt(view.n)
            sel = private_max(w, idx, budget, scale, boot_rng.child("max", t))
            out[t] = abs(sel.noisy_value)
        return out

    spent = budget.scaled(q) if hyper.private else None
    draws = mc.run(local)
    return BootstrapQuantile(alpha, type1_quantile(draws, alpha), q, draws, spent)


def simultaneous_band(beta_u: np.ndarray, G, c_u: float, scale: float, level: float) -> IntervalEstimate:
    """``beta_u_k -+ scale * c_u`` for every ``k in G`` (common half-width)."""
    idx = np.asarray(list(G), dtype=np.intp)
    center = np.asarray(beta_u, dtype=float)[idx]
    half = scale * c_u
    return IntervalEstimate(tuple(int(k) for k in idx), center - half, center + half, level,
                            "simultaneous")
