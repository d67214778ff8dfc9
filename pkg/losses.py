"""
Classification losses: the 0-1 loss, label-smoothed cross-entropy (the
minimizer's upper bound), the margin map F, the lower bounds phi and the
perturbation objective Q built from them.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

import autodiff as ad
from autodiff import Tensor
from exceptions import PreconditionError

logger = logging.getLogger(__name__)

# gamma = log(e - 1) makes the shifted-log bound pass through the origin
PHI_SHIFT = math.log(math.e - 1.0)
_NEAR_LIMIT = 30.0

ArrayLike = Union[Tensor, np.ndarray]


class SurrogateKind(str, Enum):
    TANH = 'tanh'
    SHIFTED_LOG = 'shifted_log'


@dataclass(frozen=True)
class SurrogateSpec:
    """Which lower bound of the 0-1 step is active, with its constants"""

    kind: SurrogateKind
    alpha: float = 0.1
    mu: float = 1.0
    phi_shift: float = PHI_SHIFT

    def __post_init__(self):
        object.__setattr__(self, 'kind', SurrogateKind(self.kind))
        if not self.alpha > 0:
            raise PreconditionError(f"surrogate alpha must be positive, got {self.alpha}")
        if not self.mu > 0:
            raise PreconditionError(f"surrogate mu must be positive, got {self.mu}")
        if self.kind is SurrogateKind.SHIFTED_LOG and abs(self.phi_shift - PHI_SHIFT) > 1e-15:
            raise PreconditionError(f"shifted-log phi_shift must be log(e-1), got {self.phi_shift}")

    @classmethod
    def tanh(cls, alpha: float = 0.1, mu: float = 10.0) -> 'SurrogateSpec':
        return cls(SurrogateKind.TANH, alpha=alpha, mu=mu)

    @classmethod
    def shifted_log(cls, mu: float = 1.0) -> 'SurrogateSpec':
        return cls(SurrogateKind.SHIFTED_LOG, mu=mu)

    @classmethod
    def from_name(cls, kind: str, alpha: float = 0.1, mu: float = None) -> 'SurrogateSpec':
        kind = SurrogateKind(kind)
        if mu is None:
            mu = 10.0 if kind is SurrogateKind.TANH else 1.0
        return cls(kind, alpha=alpha, mu=mu)


def _values(logits: ArrayLike) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)


def _check_batch(logits: np.ndarray, labels: np.ndarray):
    if logits.ndim != 2:
        raise PreconditionError(f"logits must be n x K, got shape {logits.shape}")
    n, k = logits.shape
    if k < 2:
        raise PreconditionError(f"need at least 2 classes, got K={k}")
    if n < 1 or labels.shape != (n,):
        raise PreconditionError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise PreconditionError(f"labels must lie in [0, {k})")


def misclassified(logits: ArrayLike, labels) -> np.ndarray:
    """Boolean per row; argmax ties resolve to the lowest class index"""
    values = _values(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(values, labels)
    return np.argmax(values, axis=1) != labels


def zero_one_loss(logits: ArrayLike, labels) -> float:
    return float(np.mean(misclassified(logits, labels)))


def accuracy(logits: ArrayLike, labels) -> float:
    return 1.0 - zero_one_loss(logits, labels)


def count_flipped(clean_logits: ArrayLike, perturbed_logits: ArrayLike, labels) -> int:
    """Samples right at w that turn wrong at w + eps"""
    right_before = ~misclassified(clean_logits, labels)
    wrong_after = misclassified(perturbed_logits, labels)
    return int(np.sum(right_before & wrong_after))


def _expand_column(column: Tensor, n: int, k: int) -> Tensor:
    return ad.broadcast_to(ad.reshape(column, (n, 1)), (n, k))


def cross_entropy_per_sample(logits: ArrayLike, labels, smoothing: float = 0.0) -> Tensor:
    if not 0.0 <= smoothing < 1.0:
        raise PreconditionError(f"label smoothing must lie in [0, 1), got {smoothing}")
    z = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(z.data, labels)
    n, k = z.shape

    targets = np.full((n, k), smoothing / k)
    targets[np.arange(n), labels] += 1.0 - smoothing
    log_softmax = z - _expand_column(ad.logsumexp(z, axis=1), n, k)
    return -ad.tensor_sum(log_softmax * Tensor(targets), axis=1)


def cross_entropy_smoothed(logits: ArrayLike, labels, smoothing: float = 0.0) -> Tensor:
    return ad.mean(cross_entropy_per_sample(logits, labels, smoothing))


def margin_matrix(logits: ArrayLike, labels) -> Tensor:
    """F[i, j] = f(x_i)_j - f(x_i)_{y_i}; the target column is exactly zero"""
    z = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(z.data, labels)
    n, k = z.shape
    return z - _expand_column(ad.index_select(z, labels), n, k)


def _shifted_log(t: Tensor) -> Tensor:
    """1 - softplus(gamma - x), evaluated so that phi(0) == 0 and phi(x < 0) <= 0 exactly"""
    x = t.data
    # equal to -log1p((1 - 1/e) expm1(-x)); expm1 would overflow in the far left tail
    near = -np.log1p((1.0 - math.exp(-1.0)) * np.expm1(-np.maximum(x, -_NEAR_LIMIT)))
    far = 1.0 - np.logaddexp(0.0, PHI_SHIFT - x)
    value = np.minimum(np.where(x >= -_NEAR_LIMIT, near, far), 1.0)
    slope = 0.5 * (1.0 + np.tanh(0.5 * (PHI_SHIFT - x)))
    return ad.elementwise('shifted-log', t, value, slope)


def phi(spec: SurrogateSpec, x):
    """Lower bound of the step I{x > 0}; floats in, float out"""
    scalar = not isinstance(x, Tensor)
    t = ad.as_tensor(x)
    if spec.kind is SurrogateKind.TANH:
        out = ad.tanh(t * spec.alpha)
    else:
        out = _shifted_log(t)
    if scalar and out.data.ndim == 0:
        return out.item()
    return out


def max_phi_per_sample(logits: ArrayLike, labels, spec: SurrogateSpec) -> Tensor:
    return ad.tensor_max(phi(spec, margin_matrix(logits, labels)), axis=1)


def q_loss_per_sample(logits: ArrayLike, labels, spec: SurrogateSpec) -> Tensor:
    """(1/mu) log sum_j exp(mu * phi(F_ij)) per row"""
    scores = phi(spec, margin_matrix(logits, labels))
    return ad.logsumexp(scores * spec.mu, axis=1) * (1.0 / spec.mu)


def q_loss(logits: ArrayLike, labels, spec: SurrogateSpec) -> Tensor:
    return ad.mean(q_loss_per_sample(logits, labels, spec))


@dataclass(frozen=True)
class CounterexampleReport:
    K: int
    delta: float
    ce_A: float
    ce_B: float
    phi_A: float
    phi_B: float
    ce_prefers: str
    phi_prefers: str


def counterexample_eval(K: int, delta: float) -> CounterexampleReport:
    """Score the two candidate outputs against CE and the tanh margin bound.

    Option vectors are read as probabilities for cross-entropy and as raw
    logits for the margin bound, with class 0 as the target.
    """
    if K < 3:
        raise PreconditionError(f"counterexample needs K >= 3, got {K}")
    if not 0.0 < delta < 0.5:
        raise PreconditionError(f"delta must lie in (0, 0.5), got {delta}")
    if delta >= 1.0 / K:
        logger.warning(f"delta={delta} >= 1/K={1.0 / K:.4f}: option A is no longer a probability vector")

    option_a = np.full(K, 1.0 / K)
    option_a[0] += delta
    option_a[1] -= delta
    option_b = np.zeros(K)
    option_b[0] = 0.5 - delta
    option_b[1] = 0.5 + delta

    margin_bound = SurrogateSpec.tanh(alpha=1.0, mu=1.0)
    target = np.zeros(1, dtype=np.int64)
    scores = {}
    for label, option in (('A', option_a), ('B', option_b)):
        margins = margin_matrix(option.reshape(1, K), target).data[0]
        # the target column is identically zero; the bound ranges over j != y
        scores[label] = float(np.max(phi(margin_bound, margins[1:]).data))

    ce_a = -math.log(option_a[0])
    ce_b = -math.log(option_b[0])
    return CounterexampleReport(
        K=K,
        delta=delta,
        ce_A=ce_a,
        ce_B=ce_b,
        phi_A=scores['A'],
        phi_B=scores['B'],
        ce_prefers='A' if ce_a > ce_b else 'B',
        phi_prefers='B' if scores['B'] > scores['A'] else 'A',
    )
