"""Differential-privacy primitives.

Noise calibration (Laplace and Gaussian mechanisms), l-infinity truncation,
noisy hard thresholding (peeling), private max and (epsilon, delta) budget
arithmetic. Every randomized routine takes an explicit :class:`Rng`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "InvalidArgument",
    "PrivacyBudget",
    "Rng",
    "Released",
    "NoisySelection",
    "laplace_scale",
    "gaussian_std",
    "noisy_ht_scale",
    "sample_laplace",
    "truncate",
    "noisy_hard_threshold",
    "noisy_hard_threshold_columns",
    "private_max",
    "compose",
    "split",
]


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's precondition."""


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidArgument(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        eps = float(self.epsilon)
        delta = float(self.delta)
        if not (eps > 0) or math.isnan(eps):
            raise InvalidArgument(f"epsilon must be positive, got {self.epsilon}")
        if not (0.0 <= delta < 1.0):
            raise InvalidArgument(f"delta must lie in [0, 1), got {self.delta}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)

    def __add__(self, other: "PrivacyBudget") -> "PrivacyBudget":
        return compose(self, other)

    def split(self, k: int) -> list["PrivacyBudget"]:
        return split(self, k)

    def scaled(self, k: int) -> "PrivacyBudget":
        """Budget of ``k`` sequential uses of this budget."""
        return PrivacyBudget(self.epsilon * k, self.delta * k)


def compose(*budgets: PrivacyBudget) -> PrivacyBudget:
    """Basic composition: epsilons and deltas add."""
    if not budgets:
        raise InvalidArgument("compose needs at least one budget")
    eps = math.fsum(b.epsilon for b in budgets)
    delta = math.fsum(b.delta for b in budgets)
    return PrivacyBudget(eps, delta)


def split(budget: PrivacyBudget, k: int) -> list[PrivacyBudget]:
    """Split ``budget`` into ``k`` equal parts.

    The last part absorbs the rounding residue (a few ulps at most) so that
    composing the parts gives back ``budget`` exactly.
    """
    if int(k) != k or k < 1:
        raise InvalidArgument(f"k must be a positive integer, got {k}")
    k = int(k)
    eps_parts = _exact_parts(budget.epsilon, k)
    delta_parts = _exact_parts(budget.delta, k)
    return [PrivacyBudget(e, d) for e, d in zip(eps_parts, delta_parts)]


def _exact_parts(total: float, k: int) -> list[float]:
    part = total / k
    head = [part] * (k - 1)
    last = total - math.fsum(head)
    for _ in range(64):
        got = math.fsum(head + [last])
        if got == total:
            break
        last = math.nextafter(last, math.inf if got < total else -math.inf)
    return head + [max(last, 0.0)]


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Rng:
    """A reproducible random stream identified by ``(seed, stream)``.

    Identical ``(seed, stream)`` pairs give identical draw sequences; distinct
    stream ids map to independent substreams of numpy's ``SeedSequence``.
    """

    seed: int
    stream: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seed = int(self.seed) & _MASK64
        stream = int(self.stream) & _MASK64
        object.__setattr__(self, "seed", seed)
        object.__setattr__(self, "stream", stream)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(ss)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *labels: int | str) -> "Rng":
        """Derive an independent stream keyed by ``labels``."""
        key = [self.stream]
        for lab in labels:
            if isinstance(lab, str):
                key.extend(lab.encode())
            else:
                key.append(int(lab) & _MASK64)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(key))
        stream = int(ss.generate_state(1, dtype=np.uint64)[0])
        return Rng(self.seed, stream)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def laplace(self, scale: float, size=None) -> np.ndarray:
        return sample_laplace(self, scale, size)


@dataclass(frozen=True)
class Released:
    """A value that has passed through a privatization step.

    ``private`` is False when the mechanism ran with zero noise (oracle or
    noiseless runs); the tag still records that the release path was taken.
    """

    value: np.ndarray
    budget: PrivacyBudget | None
    mechanism: str
    private: bool = True

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return np.asarray(self.value)
        return np.asarray(self.value, dtype=dtype)

    def __len__(self):
        return len(self.value)

    def __getitem__(self, idx):
        return self.value[idx]

    def post_process(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Released":
        """Apply a data-independent map; the privacy tag carries over."""
        return Released(np.asarray(fn(self.value)), self.budget, self.mechanism, self.private)


@dataclass(frozen=True)
class NoisySelection:
    index: int
    noisy_value: float
    raw_value: float
    private: bool = True


def laplace_scale(l1_sensitivity: float, epsilon: float) -> float:
    """Laplace scale ``b = sensitivity / epsilon``."""
    sens = _check_finite("l1_sensitivity", l1_sensitivity)
    eps = _check_finite("epsilon", epsilon)
    if sens < 0:
        raise InvalidArgument(f"l1_sensitivity must be nonnegative, got {sens}")
    if eps <= 0:
        raise InvalidArgument(f"epsilon must be positive, got {eps}")
    return sens / eps


def gaussian_std(l2_sensitivity: float, budget: PrivacyBudget) -> float:
    """Standard deviation of the Gaussian mechanism.

    ``sqrt(2 * (sensitivity / epsilon)**2 * log(1.25 / delta))``
    """
    sens = _check_finite("l2_sensitivity", l2_sensitivity)
    if sens < 0:
        raise InvalidArgument(f"l2_sensitivity must be nonnegative, got {sens}")
    if budget.delta <= 0:
        raise InvalidArgument("the Gaussian mechanism requires delta > 0")
    return math.sqrt(2.0 * (sens / budget.epsilon) ** 2 * math.log(1.25 / budget.delta))


def noisy_ht_scale(lam: float, s: int, budget: PrivacyBudget) -> float:
    """Per-draw Laplace scale of noisy hard thresholding.

    ``lam * 2 * sqrt(3 * s * log(1 / delta)) / epsilon``
    """
    lam = _check_finite("lam", lam)
    if lam < 0:
        raise InvalidArgument(f"lam must be nonnegative, got {lam}")
    if budget.delta <= 0:
        raise InvalidArgument("noisy hard thresholding requires delta > 0")
    return lam * 2.0 * math.sqrt(3.0 * s * math.log(1.0 / budget.delta)) / budget.epsilon


def sample_laplace(rng: Rng, scale: float, size=None) -> np.ndarray:
    """Laplace(0, scale) draws by inverse CDF of one uniform per draw."""
    if scale < 0 or not math.isfinite(scale):
        raise InvalidArgument(f"Laplace scale must be finite and nonnegative, got {scale}")
    u = rng.uniform(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def truncate(v, radius: float) -> np.ndarray:
    """Project onto the l-infinity ball of the given radius (clamp each coordinate)."""
    if radius < 0 or math.isnan(radius):
        raise InvalidArgument(f"radius must be nonnegative, got {radius}")
    return np.clip(np.asarray(v, dtype=float), -radius, radius)


def _peel(V: np.ndarray, s: int, scale: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Noisy top-s selection on every column of ``V`` (d x K).

    Returns the selected indices (s x K, in selection order) and the released
    values (d x K) with fresh noise on the selected coordinates only.
    """
    d, K = V.shape
    mag = np.abs(V)
    taken = np.zeros((d, K), dtype=bool)
    chosen = np.empty((s, K), dtype=np.intp)
    cols = np.arange(K)
    for r in range(s):
        scores = mag + sample_laplace(rng, scale, (d, K))
        scores[taken] = -np.inf
        # argmax returns the first maximum: lowest index wins ties
        j = np.argmax(scores, axis=0)
        chosen[r] = j
        taken[j, cols] = True
    out = np.zeros_like(V)
    final_noise = sample_laplace(rng, scale, (s, K))
    out[chosen, cols] = V[chosen, cols] + final_noise
    return chosen, out


def noisy_hard_threshold(v, s: int, lam: float, budget: PrivacyBudget, rng: Rng) -> Released:
    """Private top-``s`` selection and release (peeling).

    Runs ``s`` rounds; each round adds fresh Laplace noise to ``|v_j|`` over
    the unselected coordinates and keeps the argmax. The selected coordinates
    are released with one more independent Laplace draw each, the rest are
    zero. The Laplace scale is ``noisy_ht_scale(lam, s, budget)``.

    Parameters
    ----------
    v : array_like, shape (d,)
    s : int
        Number of coordinates to keep, ``1 <= s <= d``.
    lam : float
        Per-datum l-infinity sensitivity of ``v``. ``lam = 0`` gives the exact
        top-``s`` (flagged non-private).
    budget : PrivacyBudget
        Must have ``delta > 0``.
    rng : Rng

    Returns
    -------
    Released
        ``value`` has at most ``s`` nonzeros.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise InvalidArgument("v must be a vector")
    out = noisy_hard_threshold_columns(v[:, None], s, lam, budget, rng)
    return Released(out.value[:, 0], out.budget, out.mechanism, out.private)


def noisy_hard_threshold_columns(V, s: int, lam: float, budget: PrivacyBudget, rng: Rng) -> Released:
    """Column-wise :func:`noisy_hard_threshold` on a d x K matrix.

    Each column gets its own independent noise; ``budget`` applies to each
    column separately.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise InvalidArgument("V must be a matrix")
    d = V.shape[0]
    if int(s) != s or s < 1:
        raise InvalidArgument(f"s must be a positive integer, got {s}")
    if s > d:
        raise InvalidArgument(f"s={s} exceeds dimension d={d}")
    scale = noisy_ht_scale(lam, int(s), budget)
    _, out = _peel(V, int(s), scale, rng)
    return Released(out, budget, "noisy_hard_threshold", private=scale > 0)


def private_max(
    v,
    G: Sequence[int] | None,
    budget: PrivacyBudget,
    noise_scale: float,
    rng: Rng,
) -> NoisySelection:
    """Private argmax of ``|v_j|`` over ``j in G``.

    Both the selection noise and the release noise are Laplace with scale
    ``noise_scale``. ``budget`` is recorded by callers for accounting; the
    scale is taken as given.
    """
    v = np.asarray(v, dtype=float)
    idx = np.arange(v.shape[0]) if G is None else np.asarray(list(G), dtype=np.intp)
    if idx.size == 0:
        raise InvalidArgument("index set G must be nonempty")
    if noise_scale < 0 or not math.isfinite(noise_scale):
        raise InvalidArgument(f"noise_scale must be finite and nonnegative, got {noise_scale}")
    sub = v[idx]
    scores = np.abs(sub) + sample_laplace(rng, noise_scale, sub.shape)
    pos = int(np.argmax(scores))
    raw = float(sub[pos])
    noisy = raw + float(sample_laplace(rng, noise_scale))
    return NoisySelection(int(idx[pos]), noisy, raw, private=noise_scale > 0)
