"""
Weight perturbations: normalised ascent direction, its adaptive (|w|-scaled)
form, stochastic coordinate masks and sharpness-sensitive sample selection
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from exceptions import NumericError, PreconditionError

logger = logging.getLogger(__name__)

GRAD_NORM_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Perturbation:
    eps: np.ndarray
    degenerate: bool = False

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.eps))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.eps)


def _check(grad: np.ndarray, rho: float, op: str):
    if rho < 0:
        raise PreconditionError(f"rho must be non-negative, got {rho}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(op)


def perturbation(grad: np.ndarray, rho: float, floor: float = GRAD_NORM_FLOOR) -> Perturbation:
    """eps = rho * g / ||g||_2 over the whole flat parameter vector"""
    grad = np.asarray(grad, dtype=np.float64)
    _check(grad, rho, 'perturbation')
    norm = np.linalg.norm(grad)
    if norm < floor:
        logger.debug(f"gradient norm {norm:.3e} below floor, zero perturbation")
        return Perturbation(np.zeros_like(grad), degenerate=True)
    return Perturbation(grad * (rho / norm))


def adaptive_perturbation(w: np.ndarray, grad: np.ndarray, rho: float,
                          floor: float = GRAD_NORM_FLOOR) -> Perturbation:
    """eps = rho * |w|^2 * g / || |w| * g ||_2, elementwise in w"""
    grad = np.asarray(grad, dtype=np.float64)
    _check(grad, rho, 'adaptive-perturbation')
    scale = np.abs(np.asarray(w, dtype=np.float64))
    if scale.shape != grad.shape:
        raise PreconditionError(f"weights {scale.shape} and gradient {grad.shape} differ in shape")
    scaled = scale * grad
    norm = np.linalg.norm(scaled)
    if norm < floor:
        logger.debug(f"scaled gradient norm {norm:.3e} below floor, zero perturbation")
        return Perturbation(np.zeros_like(grad), degenerate=True)
    return Perturbation(scale * scaled * (rho / norm))


class SwpSemantics(str, Enum):
    # coordinate kept with probability beta, as the algorithm is written
    LITERAL = 'literal'
    # coordinate kept with probability 1 - beta; unbiased with the 1/(1-beta) scale
    KEEP_PROB = 'keep-prob'


def swp_mask(dim: int, beta: float, rng: np.random.Generator,
             semantics: SwpSemantics = SwpSemantics.LITERAL) -> np.ndarray:
    """Per-coordinate scale: 1/(1-beta) where selected, 0 elsewhere"""
    if not 0.0 <= beta < 1.0:
        raise PreconditionError(f"SWP beta must lie in [0, 1), got {beta}")
    semantics = SwpSemantics(semantics)
    keep = beta if semantics is SwpSemantics.LITERAL else 1.0 - beta
    selected = rng.random(dim) < keep
    return np.where(selected, 1.0 / (1.0 - beta), 0.0)


def sds_select(per_sample_gain: np.ndarray, sds_ratio: float) -> np.ndarray:
    """Indices of the ceil(ratio * n) largest gains, ascending; ties favour lower indices"""
    gains = np.asarray(per_sample_gain, dtype=np.float64)
    n = gains.shape[0]
    if n == 0:
        raise PreconditionError("SDS selection on an empty batch")
    if not 0.0 < sds_ratio <= 1.0:
        raise PreconditionError(f"SDS ratio must lie in (0, 1], got {sds_ratio}")
    keep = int(np.ceil(round(sds_ratio * n, 9)))
    order = np.lexsort((np.arange(n), -gains))
    return np.sort(order[:keep])
