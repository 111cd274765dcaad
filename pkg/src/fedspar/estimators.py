"""Private federated estimators for sparse linear regression.

Sparse regression and precision-matrix columns by federated noisy iterative
hard thresholding, private noise-variance and restricted-eigenvalue
estimates, and the two-stage estimator for heterogeneous federations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .dp_core import (
    InvalidArgument,
    PrivacyBudget,
    Released,
    Rng,
    compose,
    gaussian_std,
    noisy_hard_threshold_columns,
    sample_laplace,
    truncate,
)
from .fednet import (
    FederatedRun,
    LocalView,
    NumericalFault,
    PayloadKind,
    aggregate,
    round_broadcast,
    round_gather,
)
from .model import HyperParams

__all__ = [
    "RegressionEstimate",
    "PrecisionEstimate",
    "PrecisionColumnEstimate",
    "RestrictedEigen",
    "EigenEstimate",
    "HeteroEstimate",
    "NegativeVarianceWarning",
    "fed_sparse_regression",
    "fed_precision_column",
    "fed_precision_matrix",
    "private_variance",
    "private_restricted_eigen",
    "estimate_restricted_eigenvalues",
    "resolve_step_size",
    "hetero_regression",
    "local_sparse_regression",
    "plug_in_truncation",
    "sample_sparse_probes",
]

EIGEN_FLOOR = 1e-3


class NegativeVarianceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RegressionEstimate:
    beta_hat: np.ndarray
    iterations_run: int
    budget_spent: PrivacyBudget
    step_size: float
    private: bool = True


@dataclass(frozen=True)
class PrecisionEstimate:
    """Columns ``Theta_k`` for ``k in columns`` stacked as a d x K matrix."""

    theta_hat: np.ndarray
    columns: np.ndarray
    budget_per_column: PrivacyBudget
    step_size: float
    private: bool = True

    @property
    def budget_spent(self) -> PrivacyBudget:
        return self.budget_per_column.scaled(len(self.columns))

    def column(self, k: int) -> np.ndarray:
        pos = np.flatnonzero(self.columns == k)
        if pos.size == 0:
            raise InvalidArgument(f"column {k} was not estimated")
        return self.theta_hat[:, pos[0]]

    def full(self) -> np.ndarray:
        """d x d matrix with the estimated columns (zeros elsewhere)."""
        d = self.theta_hat.shape[0]
        out = np.zeros((d, d))
        out[:, self.columns] = self.theta_hat
        return out


@dataclass(frozen=True)
class PrecisionColumnEstimate:
    k: int
    theta_hat: np.ndarray
    budget_spent: PrivacyBudget


@dataclass(frozen=True)
class RestrictedEigen:
    """One private restricted-eigenvalue bound (largest or smallest)."""

    value: float
    mode: str
    n_probes: int
    selected_probe: int
    raw_average: float
    budget_spent: PrivacyBudget
    floored: bool = False


@dataclass(frozen=True)
class EigenEstimate:
    mu_s_hat: float
    nu_s_hat: float
    n_probes: int
    budget_spent: PrivacyBudget
    floored: bool = False


@dataclass(frozen=True)
class HeteroEstimate:
    u_hat: np.ndarray
    v_hat_per_machine: np.ndarray
    beta_hat_per_machine: np.ndarray
    budget_spent: PrivacyBudget
    step_size: float


def _total_n(run: FederatedRun) -> int:
    return int(sum(run.sizes))


def _federated_iht(
    run: FederatedRun,
    hyper: HyperParams,
    local_grad: Callable[[LocalView], np.ndarray],
    start: np.ndarray,
    step: float,
    lam: float,
    s: int,
    radius: float,
    rng: Rng,
    label: str,
    on_round: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Shared server loop: gather, average, step, noisy HT, clamp, broadcast."""
    m = run.m
    budget = hyper.per_round()
    lam = lam if hyper.private else 0.0
    current = np.array(start, dtype=float)
    round_broadcast(run, Released(current, None, "public_initialization", private=True))
    for t in range(hyper.T):
        run.next_round()
        msgs = round_gather(run, local_grad)
        half = current - (step / m) * aggregate(msgs)
        if not np.all(np.isfinite(half)):
            raise NumericalFault(f"{label}: non-finite iterate at round {t}", t)
        V = half if half.ndim == 2 else half[:, None]
        rel = noisy_hard_threshold_columns(V, s, lam, budget, rng.child(label, t))
        rel = rel.post_process(lambda x: truncate(x, radius))
        if half.ndim == 1:
            rel = rel.post_process(lambda x: x[:, 0])
        round_broadcast(run, rel, max_nonzero=s, radius=radius)
        current = np.array(rel.value)
        if on_round is not None:
            on_round(t, current)
    return current


def _regression_grad(view: LocalView) -> np.ndarray:
    beta = view.last_broadcast
    r = view.cache.get("trunc_y")
    if r is None:
        r = view.cache["trunc_y"] = truncate(view.y, view.cache["R"])
    return view.X.T @ (view.X @ beta - r) / view.n


def _prime_cache(run: FederatedRun, hyper: HyperParams) -> None:
    for mc in run.machines:
        if mc._cache.get("R") != hyper.R:
            mc._cache.pop("trunc_y", None)
        mc._cache["R"] = hyper.R


def resolve_step_size(run: FederatedRun, hyper: HyperParams) -> float:
    """``hyper.eta`` if set, else ``step_scale / mu_hat`` from a private eigen estimate.

    The eigen estimate is computed once per run and cached. It is clipped to
    ``[1/L, L]``, the eigenvalue range the model assumes, so a noisy release
    cannot produce an unstable step.
    """
    if hyper.eta is not None:
        return float(hyper.eta)
    eig = run.cache.get("eigen_max")
    if eig is None:
        eig = private_restricted_eigen(run, hyper, mode="max")
    mu = min(max(eig.value, 1.0 / hyper.L), hyper.L)
    return hyper.step_scale / mu


def fed_sparse_regression(run: FederatedRun, hyper: HyperParams, *, s: int | None = None,
                          on_round: Callable[[int, np.ndarray], None] | None = None,
                          rng: Rng | None = None) -> RegressionEstimate:
    """Federated private sparse regression (noisy IHT with truncated responses).

    Each round the machines send ``g_i = X_i^T (X_i beta - clip(y_i, R)) / n``,
    the server takes ``beta - (eta/m) sum g_i``, applies noisy hard
    thresholding at sensitivity ``eta * B0 / (mn)`` with budget
    ``(eps/T, delta/T)``, clamps to ``[-C0, C0]`` and broadcasts.
    """
    s = hyper.s if s is None else s
    step = resolve_step_size(run, hyper)
    _prime_cache(run, hyper)
    lam = step * hyper.B0 / _total_n(run)
    beta = _federated_iht(run, hyper, _regression_grad, np.zeros(run.d), step, lam, s,
                          hyper.C0, run.rng if rng is None else rng, "regression", on_round)
    spent = compose(*([hyper.per_round()] * hyper.T))
    run.record_spend("regression", spent)
    return RegressionEstimate(beta, hyper.T, spent, step, hyper.private)


def fed_precision_matrix(run: FederatedRun, hyper: HyperParams, columns=None,
                         rng: Rng | None = None) -> PrecisionEstimate:
    """Private federated estimates of precision-matrix columns.

    Column ``k`` minimizes ``0.5 theta^T Sigma theta - theta_k``; machine
    gradients are ``Sigma_i theta - e_k`` with ``Sigma_i = X_i^T X_i / n``.
    Columns are run side by side with independent noise; each column spends
    the full budget.
    """
    d = run.d
    cols = np.arange(d) if columns is None else np.asarray(columns, dtype=np.intp)
    if cols.size == 0 or cols.min() < 0 or cols.max() >= d:
        raise InvalidArgument("columns must be valid coordinates")
    step = resolve_step_size(run, hyper)
    E = np.zeros((d, cols.size))
    E[cols, np.arange(cols.size)] = 1.0

    def grad(view: LocalView) -> np.ndarray:
        return view.gram() @ view.last_broadcast - E

    lam = step * hyper.B1 / _total_n(run)
    theta = _federated_iht(run, hyper, grad, np.zeros((d, cols.size)), step, lam, hyper.s,
                           hyper.C1, run.rng if rng is None else rng, "precision")
    per_col = compose(*([hyper.per_round()] * hyper.T))
    run.record_spend("precision", per_col.scaled(cols.size))
    return PrecisionEstimate(theta, cols, per_col, step, hyper.private)


def fed_precision_column(run: FederatedRun, k: int, hyper: HyperParams,
                         rng: Rng | None = None) -> PrecisionColumnEstimate:
    est = fed_precision_matrix(run, hyper, [k], rng=rng)
    return PrecisionColumnEstimate(int(k), est.theta_hat[:, 0], est.budget_per_column)


def private_variance(run: FederatedRun, beta_hat, hyper: HyperParams,
                     rng: Rng | None = None) -> float:
    """Private noise-variance estimate from truncated residuals.

    ``beta_hat`` is a vector, or an (m, d) array of per-machine coefficients
    in machine-id order. The result can be negative because of the Gaussian
    noise; it is returned as is with a :class:`NegativeVarianceWarning`.
    """
    rng = (run.rng if rng is None else rng).child("variance")
    B = np.asarray(beta_hat, dtype=float)
    per_machine = B.ndim == 2
    if per_machine and B.shape[0] != run.m:
        raise InvalidArgument("need one coefficient vector per machine")
    pos = {mc.machine_id: i for i, mc in enumerate(run.machines)}
    R = hyper.R

    def local(view: LocalView):
        b = B[pos[view.machine_id]] if per_machine else B
        res = truncate(view.y, R) - view.X @ b
        return np.array([res @ res / view.n])

    run.next_round()
    msgs = round_gather(run, local, PayloadKind.RESIDUAL_SUMMARY)
    mean = float(aggregate(msgs)[0]) / run.m
    noise = 0.0
    if hyper.private:
        noise = float(gaussian_std(hyper.B2, hyper.budget) * rng.normal())
    run.record_spend("variance", hyper.budget)
    out = mean + noise
    if out < 0:
        warnings.warn(f"private variance estimate is negative ({out:.3g})", NegativeVarianceWarning)
    return out


def plug_in_truncation(run: FederatedRun, budget: PrivacyBudget, rng: Rng,
                       scale_cap: float = 10.0) -> float:
    """Data-driven truncation level ``sigma_y_hat * sqrt(2 log(mn))``.

    Each machine reports ``1.4826 * median|y|`` clipped to ``[0, scale_cap]``;
    the server adds Laplace noise of scale ``scale_cap / (m eps)`` to the
    average, which bounds the effect of any one machine's report. The
    result is floored at 1e-3.
    """
    if not scale_cap > 0:
        raise InvalidArgument("scale_cap must be positive")

    def local(view: LocalView) -> np.ndarray:
        return np.array([min(1.4826 * float(np.median(np.abs(view.y))), scale_cap)])

    run.next_round()
    msgs = round_gather(run, local, PayloadKind.SCALAR_SUMMARY)
    avg = float(aggregate(msgs)[0]) / run.m
    noisy = avg + float(sample_laplace(rng.child("plug_in_R"), scale_cap / (run.m * budget.epsilon)))
    run.record_spend("plug_in_R", PrivacyBudget(budget.epsilon, 0.0))
    return max(noisy, 1e-3) * math.sqrt(2.0 * math.log(sum(run.sizes)))


def sample_sparse_probes(n_probes: int, d: int, s: int, rng: Rng) -> np.ndarray:
    """Random s-sparse unit vectors: uniform support, uniform direction on it."""
    if n_probes < 1:
        raise InvalidArgument("n_probes must be >= 1")
    gen = rng.generator
    V = np.zeros((n_probes, d))
    for p in range(n_probes):
        supp = gen.choice(d, size=s, replace=False)
        z = gen.standard_normal(s)
        V[p, supp] = z / np.linalg.norm(z)
    return V


def private_restricted_eigen(run: FederatedRun, hyper: HyperParams,
                             n_probes: int | None = None,
                             mode: Literal["max", "min"] = "max",
                             rng: Rng | None = None) -> RestrictedEigen:
    """Private largest (or smallest) s-restricted eigenvalue of the pooled Gram matrix.

    Every machine reports ``v_k^T X_i^T X_i v_k / n`` for each probe; the server
    picks the noisy argmax (argmin) of the machine averages with
    Laplace(2 B3 / eps) noise and releases that average plus a fresh draw.
    """
    if mode not in ("max", "min"):
        raise InvalidArgument(f"mode must be 'max' or 'min', got {mode!r}")
    n_probes = hyper.n_probes if n_probes is None else n_probes
    rng = (run.rng if rng is None else rng).child("eigen", mode)
    V = sample_sparse_probes(n_probes, run.d, hyper.s, rng.child("probes"))
    round_broadcast(run, Released(V, None, "public_randomness"))

    def local(view: LocalView) -> np.ndarray:
        P = view.last_broadcast
        return np.einsum("pd,de,pe->p", P, view.gram(), P)

    run.next_round()
    msgs = round_gather(run, local, PayloadKind.QUADRATIC_FORM)
    avg = aggregate(msgs) / run.m
    scale = 2.0 * hyper.B3 / hyper.budget.epsilon if hyper.private else 0.0
    noisy = avg + sample_laplace(rng.child("select"), scale, avg.shape)
    k = int(np.argmax(noisy)) if mode == "max" else int(np.argmin(noisy))
    value = float(avg[k] + sample_laplace(rng.child("release"), scale))
    spent = PrivacyBudget(hyper.budget.epsilon, 0.0) if hyper.private else PrivacyBudget(hyper.budget.epsilon)
    run.record_spend(f"eigen_{mode}", spent)
    out = RestrictedEigen(value, mode, n_probes, k, float(avg[k]), spent)
    run.cache[f"eigen_{mode}"] = out
    return out


def estimate_restricted_eigenvalues(run: FederatedRun, hyper: HyperParams,
                                    n_probes: int | None = None,
                                    rng: Rng | None = None) -> EigenEstimate:
    """Both restricted-eigenvalue bounds.

    A nonpositive smallest-eigenvalue release is retried once on a fresh
    stream and then floored at ``EIGEN_FLOOR`` (flagged).
    """
    rng = run.rng if rng is None else rng
    cache = run.cache
    mu = cache.get("eigen_max") or private_restricted_eigen(run, hyper, n_probes, "max", rng)
    nu = cache.get("eigen_min") or private_restricted_eigen(run, hyper, n_probes, "min", rng)
    spent = [mu.budget_spent, nu.budget_spent]
    floored = False
    if nu.value <= 0:
        nu = private_restricted_eigen(run, hyper, n_probes, "min", rng.child("retry"))
        spent.append(nu.budget_spent)
    mu_v, nu_v = mu.value, nu.value
    if nu_v <= 0:
        nu_v, floored = EIGEN_FLOOR, True
    if mu_v <= 0:
        mu_v, floored = EIGEN_FLOOR, True
    return EigenEstimate(mu_v, nu_v, mu.n_probes, compose(*spent), floored)


def local_sparse_regression(X: np.ndarray, target: np.ndarray, offset: np.ndarray,
                            hyper: HyperParams, s: int, step: float, budget: PrivacyBudget,
                            rng: Rng) -> np.ndarray:
    """Single-machine noisy IHT on ``clip(target - X offset, R)``.

    ``v <- clamp(NoisyHT(v - (eta/n) X^T (X v - clip(y - X u, R)), s, eps/T, delta/T, eta B5 / n), C0)``
    """
    n, d = X.shape
    per_round = PrivacyBudget(budget.epsilon / hyper.T, budget.delta / hyper.T)
    r = truncate(target - X @ offset, hyper.R)
    lam = step * hyper.B5 / n if hyper.private else 0.0
    v = np.zeros(d)
    for t in range(hyper.T):
        half = v - (step / n) * (X.T @ (X @ v - r))
        if not np.all(np.isfinite(half)):
            raise NumericalFault(f"local regression: non-finite iterate at round {t}", t)
        rel = noisy_hard_threshold_columns(half[:, None], s, lam, per_round, rng.child(t))
        v = truncate(rel.value[:, 0], hyper.C0)
    return v


def hetero_regression(run: FederatedRun, hyper: HyperParams, *, stage_split: float = 0.5,
                      local_sparsity: int | None = None,
                      rng: Rng | None = None) -> HeteroEstimate:
    """Two-stage estimator for ``beta_i = u + v_i``.

    Stage 1 runs the federated estimator at sparsity ``s0`` on a
    ``stage_split`` share of the budget to get the shared part ``u``. Stage 2
    runs on each machine alone: noisy IHT at sparsity ``s1`` on the partial
    residuals ``y - X u`` with sensitivity ``eta * B5 / n`` and the remaining
    budget. ``local_sparsity`` (default ``s1``) sets the stage-2 sparsity; a
    value above ``s1`` lets each machine also correct its copy of ``u``.
    """
    if not 0 < stage_split < 1:
        raise InvalidArgument("stage_split must lie in (0, 1)")
    rng = run.rng if rng is None else rng
    b = hyper.budget
    if hyper.s0 > 0 and (local_sparsity or hyper.s1) > 0:
        b1 = PrivacyBudget(b.epsilon * stage_split, b.delta * stage_split)
        b2 = PrivacyBudget(b.epsilon - b1.epsilon, b.delta - b1.delta)
    else:
        # a single stage gets the whole budget
        b1 = b2 = b
    step = resolve_step_size(run, hyper)
    d = run.d
    if hyper.s0 > 0:
        h1 = hyper.with_(budget=b1, eta=step)
        u = fed_sparse_regression(run, h1, s=hyper.s0, rng=rng.child("stage1")).beta_hat
    else:
        u = np.zeros(d)
    V = np.zeros((run.m, d))
    s_local = hyper.s1 if local_sparsity is None else int(local_sparsity)
    if not 0 <= s_local <= d:
        raise InvalidArgument("local_sparsity must lie in [0, d]")
    if s_local > 0:
        u_pub = u.copy()

        def stage2(view: LocalView) -> np.ndarray:
            return local_sparse_regression(view.X, view.y, u_pub, hyper, s_local, step, b2,
                                           rng.child("stage2", view.machine_id))

        # stage 2 never leaves the machine: nothing is sent or logged
        for i, mc in enumerate(run.machines):
            V[i] = mc.run(stage2)
    spent = compose(b1, b2) if hyper.s0 > 0 and s_local > 0 else b
    run.record_spend("hetero_regression", spent)
    B = u[None, :] + V
    return HeteroEstimate(u, V, B, spent, step)
