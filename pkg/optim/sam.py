"""
Sharpness-aware trainer: ascend on the perturbation loss, descend on the
training loss at the perturbed point, update from the unperturbed weights.

The adaptive (|w|-scaled) radius and the efficiency knobs (stochastic weight
perturbation, sharpness-sensitive data selection) apply to every family built
on this class.
"""

import logging
from typing import Optional, Tuple

import numpy as np

import autodiff as ad
from datasets import Batch
from losses import count_flipped, cross_entropy_per_sample
from optim.base_trainer import BaseTrainer, Family, PerturbConfig, StepReport
from optim.perturbation import (Perturbation, adaptive_perturbation, perturbation,
                                sds_select, swp_mask)
from optim.schedule import Schedule, SgdState

logger = logging.getLogger(__name__)


class SamTrainer(BaseTrainer):
    family = Family.SAM

    def ascent_loss_per_sample(self, logits, labels) -> ad.Tensor:
        # same smoothed objective as the descent step
        return cross_entropy_per_sample(logits, labels, self.smoothing)

    def ascent_loss(self, logits, labels) -> ad.Tensor:
        return ad.mean(self.ascent_loss_per_sample(logits, labels))

    def compute_perturbation(self, ascent_grad: np.ndarray) -> Perturbation:
        cfg = self.perturb
        if cfg.adaptive:
            result = adaptive_perturbation(self.model.flat_params(), ascent_grad,
                                           cfg.rho, cfg.grad_norm_floor)
        else:
            result = perturbation(ascent_grad, cfg.rho, cfg.grad_norm_floor)
        if cfg.swp_beta is not None:
            mask = swp_mask(ascent_grad.size, cfg.swp_beta, self.rng, cfg.swp_semantics)
            result = Perturbation(result.eps * mask, result.degenerate)
        return result

    def select_sharp_samples(self, batch: Batch, clean_logits: np.ndarray,
                             eps: Perturbation) -> Tuple[np.ndarray, np.ndarray]:
        """Call inside ``perturbed``; returns (logits at w + eps, B+ indices)"""
        perturbed_logits = self.model.predict(batch.inputs)
        if eps.is_zero:
            return perturbed_logits, np.arange(batch.size)
        with ad.no_graph():
            before = self.ascent_loss_per_sample(clean_logits, batch.labels).data
            after = self.ascent_loss_per_sample(perturbed_logits, batch.labels).data
        return perturbed_logits, sds_select(after - before, self.perturb.sds_ratio)

    def step(self, batch: Batch) -> StepReport:
        self.check_batch(batch)
        eta = self.current_eta()
        ascent_value, ascent_grad, clean_logits = self.loss_and_grad(
            self.ascent_loss, batch.inputs, batch.labels)
        eps = self.compute_perturbation(ascent_grad)

        with self.perturbed(eps.eps):
            if self.perturb.sds_ratio is not None:
                perturbed_logits, chosen = self.select_sharp_samples(batch, clean_logits, eps)
            else:
                perturbed_logits, chosen = None, None
            inputs = batch.inputs if chosen is None else batch.inputs[chosen]
            labels = batch.labels if chosen is None else batch.labels[chosen]
            perturbed_value, grad, descent_logits = self.loss_and_grad(
                self.training_loss, inputs, labels)
        if perturbed_logits is None:
            perturbed_logits = descent_logits

        direction = self.apply_update(grad, eta)
        return StepReport(
            loss=self.clean_training_loss(ascent_value, clean_logits, batch.labels),
            eta=eta,
            direction=direction,
            batch_size=batch.size,
            clean_logits=clean_logits,
            ascent_loss=ascent_value,
            perturbed_loss=perturbed_value,
            eps=eps.eps,
            eps_norm=eps.norm,
            degenerate=eps.degenerate,
            flipped=count_flipped(clean_logits, perturbed_logits, batch.labels),
            selected=labels.shape[0],
        )

    def clean_training_loss(self, ascent_value: float, clean_logits: np.ndarray,
                            labels: np.ndarray) -> float:
        return ascent_value


def sam_step(model, batch: Batch, cfg: PerturbConfig, sgd: SgdState, schedule: Schedule,
             smoothing: float = 0.1, rng: Optional[np.random.Generator] = None) -> StepReport:
    return SamTrainer(model, cfg, sgd, schedule, smoothing, rng).step(batch)
