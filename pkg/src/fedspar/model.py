"""Problem data model, algorithm constants and synthetic federations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dp_core import InvalidArgument, PrivacyBudget, Rng

__all__ = [
    "MachineDataset",
    "TrueModel",
    "HyperParams",
    "gamma_constant",
    "ar_covariance",
    "make_true_model",
    "sample_federation",
    "export_csv",
    "import_csv",
]


@dataclass(frozen=True)
class MachineDataset:
    """One machine's samples. Rows of ``X`` are observations."""

    X: np.ndarray
    y: np.ndarray
    machine_id: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1:
            raise InvalidArgument("X must be a matrix and y a vector")
        if X.shape[0] != y.shape[0]:
            raise InvalidArgument(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidArgument(f"machine {self.machine_id}: non-finite data")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class TrueModel:
    beta_per_machine: np.ndarray  # (m, d)
    shared_support: np.ndarray
    sigma: float
    covariance: np.ndarray
    s_star: int

    @property
    def m(self) -> int:
        return self.beta_per_machine.shape[0]

    @property
    def d(self) -> int:
        return self.beta_per_machine.shape[1]

    @property
    def s0(self) -> int:
        return len(self.shared_support)

    def support(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.beta_per_machine[i])

    @property
    def shared_beta(self) -> np.ndarray:
        """The common component ``u`` (zero off the shared support)."""
        u = np.zeros(self.d)
        u[self.shared_support] = self.beta_per_machine[0, self.shared_support]
        return u


def gamma_constant(mu_s: float) -> float:
    """``max(mu(9 mu + 1/4), 17/16 mu + 1/96)`` for a restricted eigenvalue ``mu``."""
    return max(mu_s * (9.0 * mu_s + 0.25), 17.0 / 16.0 * mu_s + 1.0 / 96.0)


def _derived(m, n, d, s, s1, s_star, R, c0, c1, L, kappa):
    cx = 3.0 * math.sqrt(2.0 * L * kappa**2 * math.log(d))
    return dict(
        cx=cx,
        B0=2.0 * (R + math.sqrt(s) * c0 * cx) * cx,
        B1=2.0 * math.sqrt(s) * c1 * cx**2,
        B2=(4.0 / (m * n)) * (R**2 + s**2 * c0**2 * cx**2),
        B3=2.0 * s * cx**2 / n,
        B4=4.0 * L * math.sqrt(math.log(m)) * cx * (R + c0 * cx * math.sqrt(s_star)) / math.sqrt(m * n),
        B5=cx * (2.0 * R + math.sqrt(s1) * c0 * cx),
        B6=2.0 * math.sqrt(s * math.log(n) / n) * cx * c1,
        Delta1=math.sqrt(s) * c1 * cx * R + s * c0 * c1 * cx**2,
    )


@dataclass(frozen=True)
class HyperParams:
    """Tuning constants shared by the estimation and inference routines.

    Build with :meth:`from_primitives`; the noise constants ``cx``, ``B0`` to
    ``B6`` and ``Delta1`` are functions of the primitives and are re-derived
    and compared on construction.

    ``eta`` of ``None`` means "set from the private restricted-eigenvalue
    estimate at run time" (``step_scale / mu_hat``).
    """

    m: int
    n: int
    d: int
    s: int
    s0: int
    s1: int
    s_star: int
    T: int
    eta: float | None
    R: float
    C0: float
    C1: float
    c0: float
    c1: float
    L: float
    kappa: float
    budget: PrivacyBudget
    cx: float
    B0: float
    B1: float
    B2: float
    B3: float
    B4: float
    B5: float
    B6: float
    Delta1: float
    gamma: float
    step_scale: float = 0.5
    n_probes: int = 1000
    private: bool = True

    def __post_init__(self):
        for name in ("m", "n", "d", "s", "s_star", "T"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.s > self.d:
            raise InvalidArgument(f"working sparsity s={self.s} exceeds d={self.d}")
        if self.s0 < 0 or self.s1 < 0:
            raise InvalidArgument("s0 and s1 must be nonnegative")
        for name in ("R", "C0", "C1", "c0", "c1", "L", "kappa"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.eta is not None and not self.eta > 0:
            raise InvalidArgument("eta must be positive")
        if self.gamma < 0:
            raise InvalidArgument("gamma must be nonnegative")
        expect = _derived(self.m, self.n, self.d, self.s, self.s1, self.s_star,
                          self.R, self.c0, self.c1, self.L, self.kappa)
        for name, value in expect.items():
            if getattr(self, name) != value:
                raise InvalidArgument(f"{name}={getattr(self, name)!r} does not match its derivation {value!r}")

    @classmethod
    def from_primitives(
        cls,
        m: int,
        n: int,
        d: int,
        s: int,
        budget: PrivacyBudget,
        *,
        s_star: int | None = None,
        s0: int = 0,
        s1: int | None = None,
        T: int = 30,
        eta: float | None = None,
        sigma: float | None = None,
        R: float | None = None,
        c0: float = 2.0,
        c1: float = 2.0,
        C0: float | None = None,
        C1: float | None = None,
        L: float = 3.0,
        kappa: float = 1.0,
        mu_s: float | None = None,
        step_scale: float = 0.5,
        n_probes: int = 1000,
        private: bool = True,
    ) -> "HyperParams":
        """Assemble constants.

        ``R`` defaults to ``sigma * sqrt(2 log(mn))`` (so one of them must be
        given); ``C0``/``C1`` default to ``c0``/``c1``; ``gamma`` is evaluated
        at ``mu_s`` (default ``L``, an upper bound on the restricted
        eigenvalue).
        """
        s_star = s if s_star is None else s_star
        s1 = max(s - s0, 0) if s1 is None else s1
        if R is None:
            if sigma is None:
                raise InvalidArgument("give either R or sigma")
            R = default_truncation(sigma, m, n)
        der = _derived(m, n, d, s, s1, s_star, R, c0, c1, L, kappa)
        return cls(
            m=m, n=n, d=d, s=s, s0=s0, s1=s1, s_star=s_star, T=T, eta=eta, R=R,
            C0=c0 if C0 is None else C0, C1=c1 if C1 is None else C1,
            c0=c0, c1=c1, L=L, kappa=kappa, budget=budget,
            gamma=gamma_constant(L if mu_s is None else mu_s),
            step_scale=step_scale, n_probes=n_probes, private=private, **der,
        )

    def with_(self, **changes) -> "HyperParams":
        """Copy with changed primitives; derived constants are recomputed."""
        prim = {k: getattr(self, k) for k in (
            "m", "n", "d", "s", "s0", "s1", "s_star", "R", "c0", "c1", "L", "kappa")}
        derived_keys = set(_derived(1, 1, 2, 1, 0, 1, 1.0, 1.0, 1.0, 1.0, 1.0))
        bad = derived_keys & set(changes)
        if bad:
            raise InvalidArgument(f"derived constants cannot be set directly: {sorted(bad)}")
        prim.update({k: v for k, v in changes.items() if k in prim})
        rest = {k: v for k, v in changes.items() if k not in prim}
        der = _derived(prim["m"], prim["n"], prim["d"], prim["s"], prim["s1"], prim["s_star"],
                       prim["R"], prim["c0"], prim["c1"], prim["L"], prim["kappa"])
        return replace(self, **prim, **der, **rest)

    def per_round(self) -> PrivacyBudget:
        """Budget of one of the ``T`` iterations (``eps/T``, ``delta/T``)."""
        return PrivacyBudget(self.budget.epsilon / self.T, self.budget.delta / self.T)

    def gamma_at(self, mu_hat: float) -> float:
        return gamma_constant(mu_hat)


def default_truncation(sigma: float, m: int, n: int) -> float:
    """``sigma * sqrt(2 log(mn))``."""
    return sigma * math.sqrt(2.0 * math.log(m * n))


def ar_covariance(d: int, rho: float) -> np.ndarray:
    """Autoregressive covariance, entry ``(j, k) = rho**|j - k|``."""
    if d < 1:
        raise InvalidArgument("d must be >= 1")
    if not abs(rho) < 1:
        raise InvalidArgument(f"|rho| must be < 1, got {rho}")
    idx = np.arange(d)
    return float(rho) ** np.abs(idx[:, None] - idx[None, :])


def make_true_model(m: int, d: int, s_star: int, s0: int, sigma: float, rng: Rng,
                    covariance: np.ndarray | None = None, homogeneous: bool = False) -> TrueModel:
    """Heterogeneous sparse coefficients.

    Every machine gets ``1/sqrt(s_star)`` on the first ``s0`` coordinates and
    on ``s_star - s0`` further coordinates drawn without replacement from
    ``{s0, ..., d-1}``. The covariance defaults to ``ar_covariance(d, 0.5)``.
    With ``homogeneous=True`` machine 0's draw is reused by every machine.
    """
    if not (0 <= s0 <= s_star <= d):
        raise InvalidArgument(f"need 0 <= s0 <= s_star <= d, got s0={s0}, s_star={s_star}, d={d}")
    if s_star < 1 or m < 1:
        raise InvalidArgument("s_star and m must be >= 1")
    if sigma < 0:
        raise InvalidArgument("sigma must be nonnegative")
    cov = ar_covariance(d, 0.5) if covariance is None else np.asarray(covariance, dtype=float)
    val = 1.0 / math.sqrt(s_star)
    B = np.zeros((m, d))
    B[:, :s0] = val
    pool = np.arange(s0, d)
    for i in range(m):
        src = 0 if homogeneous else i
        picks = rng.child("beta", src).generator.choice(pool, size=s_star - s0, replace=False)
        B[i, picks] = val
    shared = np.flatnonzero(B[0]) if homogeneous else np.arange(s0)
    return TrueModel(B, shared, float(sigma), cov, s_star)


def sample_federation(model: TrueModel, n: int | Sequence[int], rng: Rng) -> list[MachineDataset]:
    """Draw ``X_i ~ N(0, Sigma)`` row-wise and ``y_i = X_i beta_i + sigma * w``."""
    m = model.m
    sizes = [int(n)] * m if np.ndim(n) == 0 else [int(k) for k in n]
    if len(sizes) != m or min(sizes) < 1:
        raise InvalidArgument("n must be >= 1 for every machine")
    try:
        chol = np.linalg.cholesky(model.covariance)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgument("covariance is not symmetric positive definite") from exc
    if not np.allclose(model.covariance, model.covariance.T):
        raise InvalidArgument("covariance is not symmetric")
    out = []
    for i, ni in enumerate(sizes):
        r = rng.child("data", i)
        Z = r.normal((ni, model.d))
        X = Z @ chol.T
        y = X @ model.beta_per_machine[i] + model.sigma * r.normal(ni)
        out.append(MachineDataset(X, y, i))
    return out


def export_csv(datasets: Sequence[MachineDataset], path: str | Path) -> None:
    """Write ``machine_id, y, x_0..x_{d-1}`` rows (debugging aid)."""
    d = datasets[0].d if datasets else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["machine_id", "y"] + [f"x_{j}" for j in range(d)])
        for ds in datasets:
            for yi, xi in zip(ds.y, ds.X):
                w.writerow([ds.machine_id, repr(float(yi))] + [repr(float(v)) for v in xi])


def import_csv(path: str | Path) -> list[MachineDataset]:
    rows: dict[int, list[list[float]]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["machine_id", "y"]:
            raise InvalidArgument(f"unexpected header {header[:2]}")
        for row in r:
            rows.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
    out = []
    for mid in sorted(rows):
        arr = np.array(rows[mid], dtype=float).reshape(len(rows[mid]), len(header) - 1)
        out.append(MachineDataset(arr[:, 1:], arr[:, 0], mid))
    return out
