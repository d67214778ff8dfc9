"""
Plain momentum SGD trainer
"""

from datasets import Batch
from optim.base_trainer import BaseTrainer, Family, PerturbConfig, StepReport
from optim.schedule import Schedule, SgdState


class SgdTrainer(BaseTrainer):
    family = Family.SGD

    def step(self, batch: Batch) -> StepReport:
        self.check_batch(batch)
        eta = self.current_eta()
        loss, grad, logits = self.loss_and_grad(self.training_loss, batch.inputs, batch.labels)
        direction = self.apply_update(grad, eta)
        return StepReport(
            loss=loss,
            eta=eta,
            direction=direction,
            batch_size=batch.size,
            clean_logits=logits,
            selected=batch.size,
        )


def sgd_step(model, batch: Batch, cfg: PerturbConfig, sgd: SgdState, schedule: Schedule,
             smoothing: float = 0.1) -> StepReport:
    return SgdTrainer(model, cfg, sgd, schedule, smoothing).step(batch)
