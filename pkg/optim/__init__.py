"""
Trainers for the SGD, SAM and BiSAM families
"""

from typing import Optional

import numpy as np

from models import MlpModel
from optim.base_trainer import BaseTrainer, Family, PerturbConfig, PerturbLoss, StepReport
from optim.bisam import BisamTrainer, bisam_step
from optim.sam import SamTrainer, sam_step
from optim.schedule import Schedule, ScheduleKind, SgdState, cosine_eta
from optim.sgd import SgdTrainer, sgd_step

TRAINERS = {
    Family.SGD: SgdTrainer,
    Family.SAM: SamTrainer,
    Family.BISAM: BisamTrainer,
}


def build_trainer(model: MlpModel, perturb: PerturbConfig, sgd: SgdState, schedule: Schedule,
                  smoothing: float = 0.1, rng: Optional[np.random.Generator] = None) -> BaseTrainer:
    return TRAINERS[perturb.family](model, perturb, sgd, schedule, smoothing, rng)
