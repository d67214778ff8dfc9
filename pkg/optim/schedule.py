"""
Learning-rate schedules and the momentum SGD state
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from exceptions import PreconditionError


class ScheduleKind(str, Enum):
    CONSTANT = 'constant'
    COSINE = 'cosine'


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind
    eta0: float
    total_steps: int

    def __post_init__(self):
        object.__setattr__(self, 'kind', ScheduleKind(self.kind))
        if not self.eta0 > 0:
            raise PreconditionError(f"eta0 must be positive, got {self.eta0}")
        if self.total_steps < 1:
            raise PreconditionError(f"total_steps must be positive, got {self.total_steps}")

    def eta(self, t: int) -> float:
        if self.kind is ScheduleKind.COSINE:
            return cosine_eta(self, t)
        if not 0 <= t <= self.total_steps:
            raise PreconditionError(f"step {t} outside [0, {self.total_steps}]")
        return self.eta0


def cosine_eta(schedule: Schedule, t: int) -> float:
    """Half cosine from eta0 at t=0 down to 0 at t=total_steps"""
    if not 0 <= t <= schedule.total_steps:
        raise PreconditionError(f"step {t} outside [0, {schedule.total_steps}]")
    return schedule.eta0 * 0.5 * (1.0 + math.cos(math.pi * t / schedule.total_steps))


@dataclass
class SgdState:
    """Heavy-ball momentum with coupled weight decay"""

    momentum: np.ndarray
    momentum_coeff: float = 0.9
    weight_decay: float = 5e-4
    step_count: int = 0

    @classmethod
    def zeros(cls, dim: int, momentum_coeff: float = 0.9, weight_decay: float = 5e-4) -> 'SgdState':
        return cls(np.zeros(dim), momentum_coeff, weight_decay)

    def update(self, params: np.ndarray, grad: np.ndarray, eta: float) -> Tuple[np.ndarray, np.ndarray]:
        """Return (new params, update direction) with w' = w - eta * direction"""
        if grad.shape != self.momentum.shape:
            raise PreconditionError(f"gradient shape {grad.shape} != momentum shape {self.momentum.shape}")
        self.momentum = self.momentum_coeff * self.momentum + (grad + self.weight_decay * params)
        self.step_count += 1
        direction = self.momentum.copy()
        return params - eta * direction, direction
