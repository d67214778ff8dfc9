"""
Base class for trainers: one training step on one minibatch
"""

import logging
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

import autodiff as ad
from datasets import Batch
from exceptions import PreconditionError
from losses import SurrogateSpec, cross_entropy_smoothed
from models import MlpModel
from optim.perturbation import GRAD_NORM_FLOOR, SwpSemantics
from optim.schedule import Schedule, SgdState

logger = logging.getLogger(__name__)


class Family(str, Enum):
    # plain SGD: no perturbation, rho ignored
    SGD = 'sgd'
    SAM = 'sam'
    BISAM = 'bisam'


class PerturbLoss(str, Enum):
    Q = 'q'
    # diagnostic: ascent on cross-entropy through the BiSAM code path
    CE = 'ce'


@dataclass(frozen=True)
class PerturbConfig:
    family: Family = Family.SGD
    rho: float = 0.05
    adaptive: bool = False
    swp_beta: Optional[float] = None
    swp_semantics: SwpSemantics = SwpSemantics.LITERAL
    sds_ratio: Optional[float] = None
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec.shifted_log)
    grad_norm_floor: float = GRAD_NORM_FLOOR
    perturb_loss: PerturbLoss = PerturbLoss.Q

    def __post_init__(self):
        object.__setattr__(self, 'family', Family(self.family))
        object.__setattr__(self, 'swp_semantics', SwpSemantics(self.swp_semantics))
        object.__setattr__(self, 'perturb_loss', PerturbLoss(self.perturb_loss))
        if self.rho < 0:
            raise PreconditionError(f"rho must be non-negative, got {self.rho}")
        if self.swp_beta is not None and not 0.0 <= self.swp_beta < 1.0:
            raise PreconditionError(f"swp_beta must lie in [0, 1), got {self.swp_beta}")
        if self.sds_ratio is not None and not 0.0 < self.sds_ratio <= 1.0:
            raise PreconditionError(f"sds_ratio must lie in (0, 1], got {self.sds_ratio}")
        if not self.grad_norm_floor > 0:
            raise PreconditionError(f"grad_norm_floor must be positive, got {self.grad_norm_floor}")

    @property
    def efficient(self) -> bool:
        return self.swp_beta is not None or self.sds_ratio is not None


@dataclass(eq=False)
class StepReport:
    """What one step did; ``direction`` satisfies w_next = w - eta * direction"""

    loss: float
    eta: float
    direction: np.ndarray
    batch_size: int
    clean_logits: np.ndarray
    ascent_loss: Optional[float] = None
    perturbed_loss: Optional[float] = None
    eps: Optional[np.ndarray] = None
    eps_norm: float = 0.0
    degenerate: bool = False
    flipped: int = 0
    selected: int = 0


class BaseTrainer(ABC):
    """Owns one model, its SGD state and schedule for the length of a run"""

    family: Family = None

    def __init__(self, model: MlpModel, perturb: PerturbConfig, sgd: SgdState,
                 schedule: Schedule, smoothing: float = 0.1,
                 rng: Optional[np.random.Generator] = None):
        if self.family is not None and perturb.family is not self.family:
            raise PreconditionError(
                f"{type(self).__name__} needs family {self.family.value}, got {perturb.family.value}"
            )
        self.model = model
        self.perturb = perturb
        self.sgd = sgd
        self.schedule = schedule
        self.smoothing = smoothing
        self.rng = rng if rng is not None else np.random.default_rng(0)

    @abstractmethod
    def step(self, batch: Batch) -> StepReport:
        """Take one optimisation step on ``batch``"""
        pass

    def get_family_name(self) -> str:
        return self.perturb.family.value

    def current_eta(self) -> float:
        return self.schedule.eta(self.sgd.step_count)

    def check_batch(self, batch: Batch):
        if batch.role != 'train':
            raise PreconditionError(f"refusing a gradient step on a {batch.role!r} batch")
        if batch.size == 0:
            raise PreconditionError("empty batch")

    def training_loss(self, logits, labels) -> ad.Tensor:
        return cross_entropy_smoothed(logits, labels, self.smoothing)

    def loss_and_grad(self, loss_fn: Callable, inputs: np.ndarray,
                      labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Forward + backward on a fresh graph; returns (loss, flat grad, logits)"""
        self.model.zero_grad()
        with ad.Graph() as graph:
            logits = self.model.forward(inputs)
            loss = loss_fn(logits, labels)
        graph.backward(loss)
        return loss.item(), self.model.flat_grad(), logits.data

    def apply_update(self, grad: np.ndarray, eta: float) -> np.ndarray:
        params = self.model.flat_params()
        updated, direction = self.sgd.update(params, grad, eta)
        self.model.set_flat_params(updated)
        return direction

    @contextmanager
    def perturbed(self, eps: np.ndarray):
        """Evaluate at w + eps; the saved w is written back bit-for-bit"""
        saved = self.model.flat_params()
        self.model.set_flat_params(saved + eps)
        try:
            yield
        finally:
            self.model.set_flat_params(saved)
