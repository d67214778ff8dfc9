"""
Multilayer perceptron classifier f_w built on the autodiff core
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tensor
from exceptions import DimensionError, PreconditionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    classes: int
    hidden: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.classes < 2 or any(h < 1 for h in self.hidden):
            raise PreconditionError(f"invalid model widths {self.widths}")

    @property
    def widths(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden + (self.classes,)

    @property
    def num_params(self) -> int:
        widths = self.widths
        return sum((d_in + 1) * d_out for d_in, d_out in zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        return {'input_dim': self.input_dim, 'classes': self.classes, 'hidden': list(self.hidden)}

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelSpec':
        return cls(int(data['input_dim']), int(data['classes']), tuple(data.get('hidden', ())))


class MlpModel:
    """ReLU MLP producing K logits; parameters are leaf tensors"""

    def __init__(self, spec: ModelSpec, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.layers: List[Tuple[Tensor, Tensor]] = []
        for index, (d_in, d_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            if rng is None:
                weight = np.zeros((d_in, d_out))
                bias = np.zeros((1, d_out))
            else:
                bound = 1.0 / np.sqrt(d_in)
                weight = rng.uniform(-bound, bound, size=(d_in, d_out))
                bias = rng.uniform(-bound, bound, size=(1, d_out))
            self.layers.append((
                Tensor(weight, requires_grad=True, name=f"W{index}"),
                Tensor(bias, requires_grad=True, name=f"b{index}"),
            ))

    @classmethod
    def zeros(cls, spec: ModelSpec) -> 'MlpModel':
        return cls(spec, rng=None)

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer]

    @property
    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def forward(self, inputs) -> Tensor:
        h = ad.as_tensor(inputs)
        if h.data.ndim != 2 or h.shape[1] != self.spec.input_dim:
            raise DimensionError('forward', h.shape, (None, self.spec.input_dim))
        n = h.shape[0]
        last = len(self.layers) - 1
        for index, (weight, bias) in enumerate(self.layers):
            h = ad.matmul(h, weight) + ad.broadcast_to(bias, (n, bias.shape[1]))
            if index < last:
                h = ad.relu(h)
        return h

    def predict(self, inputs) -> np.ndarray:
        """Logits without recording a graph"""
        with ad.no_graph():
            return self.forward(inputs).data

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DimensionError('set-params', flat.shape, (self.num_params,))
        offset = 0
        for p in self.parameters():
            size = p.data.size
            p.data[...] = flat[offset:offset + size].reshape(p.shape)
            offset += size

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
            for p in self.parameters()
        ])

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def forward(model: MlpModel, inputs) -> Tensor:
    return model.forward(inputs)
