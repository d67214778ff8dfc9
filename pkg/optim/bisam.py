"""
Bilevel trainer: the perturbation maximises the smoothed 0-1 lower bound Q
while the weights still descend on smoothed cross-entropy.
"""

from typing import Optional

import numpy as np

import autodiff as ad
from datasets import Batch
from losses import cross_entropy_per_sample, cross_entropy_smoothed, q_loss_per_sample
from optim.base_trainer import Family, PerturbConfig, PerturbLoss, StepReport
from optim.sam import SamTrainer
from optim.schedule import Schedule, SgdState


class BisamTrainer(SamTrainer):
    family = Family.BISAM

    def ascent_loss_per_sample(self, logits, labels) -> ad.Tensor:
        if self.perturb.perturb_loss is PerturbLoss.CE:
            return cross_entropy_per_sample(logits, labels, self.smoothing)
        return q_loss_per_sample(logits, labels, self.perturb.surrogate)

    def clean_training_loss(self, ascent_value: float, clean_logits: np.ndarray,
                            labels: np.ndarray) -> float:
        if self.perturb.perturb_loss is PerturbLoss.CE:
            return ascent_value
        with ad.no_graph():
            return cross_entropy_smoothed(clean_logits, labels, self.smoothing).item()


def bisam_step(model, batch: Batch, cfg: PerturbConfig, sgd: SgdState, schedule: Schedule,
               smoothing: float = 0.1, rng: Optional[np.random.Generator] = None) -> StepReport:
    return BisamTrainer(model, cfg, sgd, schedule, smoothing, rng).step(batch)
