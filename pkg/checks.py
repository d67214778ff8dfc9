"""
Self-generating verification suites: finite-difference gradients, the
0-1 lower-bound chain, the log-sum-exp sandwich and the counterexample sweep
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

import autodiff as ad
from autodiff import Tensor
from losses import (SurrogateKind, SurrogateSpec, counterexample_eval, cross_entropy_smoothed,
                    max_phi_per_sample, misclassified, phi, q_loss, q_loss_per_sample)
from models import MlpModel, ModelSpec
from utils import RngUtils

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4
BOUND_TOLERANCE = 1e-10
# hidden pre-activations closer than this to zero are resampled; FD across the ReLU kink is meaningless
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    """``worst`` is the worst relative error (gradients) or the smallest slack (bounds)"""

    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int = 0
    witness: Optional[str] = None

    def line(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        text = f"{status} {self.name}: worst={self.worst:.3e} tol={self.tolerance:.0e} cases={self.cases}"
        if self.witness:
            text += f"\n    counterexample: {self.witness}"
        return text


@dataclass
class CheckReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> List[str]:
        return [r.line() for r in self.results]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        step = np.zeros(x.size)
        step[i] = h
        step = step.reshape(x.shape)
        flat[i] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def _analytic_gradient(op: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x, requires_grad=True)
    with ad.Graph() as graph:
        out = op(leaf)
    graph.backward(out)
    return leaf.grad


def _primitive_suite(rng: np.random.Generator) -> Dict[str, tuple]:
    """name -> (scalar-valued op, input) with inputs away from every kink"""
    shape = (3, 4)
    weights = Tensor(rng.standard_normal(shape))
    right = Tensor(rng.standard_normal((4, 2)))
    other = Tensor(rng.standard_normal(shape))
    labels = rng.integers(0, 4, size=3)
    signs = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    away_from_zero = signs * (0.1 + np.abs(rng.standard_normal(shape)))
    # distinct row entries so the arg-max is stable under the FD step
    spaced = np.stack([rng.permutation(4) * 0.5 for _ in range(3)]) + 0.01 * rng.standard_normal(shape)

    def weighted(out: Tensor) -> Tensor:
        return ad.tensor_sum(ad.mul(out, weights))

    return {
        'add': (lambda t: weighted(ad.add(t, other)), rng.standard_normal(shape)),
        'sub': (lambda t: weighted(ad.sub(other, t)), rng.standard_normal(shape)),
        'mul': (lambda t: weighted(ad.mul(t, t)), rng.standard_normal(shape)),
        'scalar_mul': (lambda t: weighted(ad.scalar_mul(t, -2.5)), rng.standard_normal(shape)),
        'matmul': (lambda t: ad.tensor_sum(ad.matmul(t, right)), rng.standard_normal(shape)),
        'relu': (lambda t: weighted(ad.relu(t)), away_from_zero),
        'log': (lambda t: weighted(ad.log(t)), rng.uniform(0.5, 2.0, shape)),
        'exp': (lambda t: weighted(ad.exp(t)), rng.standard_normal(shape)),
        'tanh': (lambda t: weighted(ad.tanh(t)), rng.standard_normal(shape)),
        'softplus': (lambda t: weighted(ad.softplus(t)), 3.0 * rng.standard_normal(shape)),
        'sum': (lambda t: ad.tensor_sum(ad.mul(ad.tensor_sum(t, axis=0), ad.tensor_sum(weights, axis=0))),
                rng.standard_normal(shape)),
        'mean': (lambda t: ad.mean(ad.mul(t, t)), rng.standard_normal(shape)),
        'max': (lambda t: ad.tensor_sum(ad.mul(ad.tensor_max(t, axis=1), ad.tensor_max(weights, axis=1))),
                spaced),
        'logsumexp': (lambda t: ad.tensor_sum(ad.mul(ad.logsumexp(t, axis=1), ad.mean(weights, axis=1))),
                      2.0 * rng.standard_normal(shape)),
        'index_select': (lambda t: ad.tensor_sum(ad.mul(ad.index_select(t, labels), ad.mean(weights, axis=1))),
                         rng.standard_normal(shape)),
        'broadcast': (lambda t: weighted(ad.broadcast_to(t, shape)), rng.standard_normal((1, 4))),
    }


def _random_model(rng: np.random.Generator, inputs: np.ndarray, classes: int) -> MlpModel:
    while True:
        spec = ModelSpec(inputs.shape[1], classes, (int(rng.integers(3, 7)),))
        model = MlpModel(spec, rng=rng)
        weight, bias = model.layers[0]
        pre = inputs @ weight.data + bias.data
        if np.min(np.abs(pre)) > KINK_MARGIN:
            return model


def _model_gradient_error(model: MlpModel, inputs: np.ndarray, labels: np.ndarray,
                          loss_fn: Callable, h: float) -> float:
    model.zero_grad()
    with ad.Graph() as graph:
        loss = loss_fn(model.forward(inputs), labels)
    graph.backward(loss)
    analytic = model.flat_grad()

    saved = model.flat_params()

    def value(flat: np.ndarray) -> float:
        model.set_flat_params(flat)
        return loss_fn(model.predict(inputs), labels).item()

    try:
        numeric = _fd_gradient(value, saved, h)
    finally:
        model.set_flat_params(saved)
    return relative_error(analytic, numeric)


def check_gradients(seed: int = 0, n_models: int = 100, h: float = FD_STEP,
                    tolerance: float = GRAD_TOLERANCE) -> CheckReport:
    """Central differences against reverse mode for every primitive and both composed losses"""
    rng = RngUtils.make_rng(seed)
    report = CheckReport()

    for name, (op, x) in _primitive_suite(rng).items():
        analytic = _analytic_gradient(op, x)
        numeric = _fd_gradient(lambda v: op(Tensor(v)).item(), x, h)
        error = relative_error(analytic, numeric)
        report.results.append(CheckResult(
            f"grad/{name}", error < tolerance, error, tolerance, 1,
            None if error < tolerance else f"input={x.tolist()}",
        ))

    worst = {'q': (0.0, None), 'ce': (0.0, None)}
    for index in range(n_models):
        n = int(rng.integers(3, 9))
        classes = int(rng.integers(2, 6))
        inputs = rng.standard_normal((n, int(rng.integers(2, 5))))
        labels = rng.integers(0, classes, size=n)
        model = _random_model(rng, inputs, classes)
        kind = SurrogateKind.TANH if rng.random() < 0.5 else SurrogateKind.SHIFTED_LOG
        spec = SurrogateSpec.from_name(kind, alpha=0.1, mu=float(rng.choice([0.1, 1.0, 10.0])))

        losses = {
            'q': lambda logits, y: q_loss(logits, y, spec),
            'ce': lambda logits, y: cross_entropy_smoothed(logits, y, 0.1),
        }
        for name, loss_fn in losses.items():
            error = _model_gradient_error(model, inputs, labels, loss_fn, h)
            if error > worst[name][0]:
                worst[name] = (error, f"model #{index} widths={model.spec.widths} {spec.kind.value} mu={spec.mu}")

    for name, (error, where) in worst.items():
        passed = error < tolerance
        report.results.append(CheckResult(f"grad/{name}-loss", passed, error, tolerance, n_models,
                                          None if passed else where))
    for line in report.lines():
        logger.debug(line)
    return report


class _SlackTracker:
    """Smallest slack seen (bound minus value) and the input that produced it"""

    def __init__(self, name: str, tolerance: float):
        self.name = name
        self.tolerance = tolerance
        self.worst = np.inf
        self.witness = None
        self.cases = 0

    def observe(self, slack: np.ndarray, describe: Callable[[int], str]):
        slack = np.asarray(slack, dtype=np.float64).reshape(-1)
        self.cases += slack.size
        index = int(np.argmin(slack))
        if slack[index] < self.worst:
            self.worst = float(slack[index])
            self.witness = describe(index)

    def result(self) -> CheckResult:
        passed = self.worst >= -self.tolerance
        return CheckResult(self.name, passed, self.worst, self.tolerance, self.cases,
                           None if passed else self.witness)


def check_bounds(seed: int = 0, draws: int = 10_000, mus: Sequence[float] = (0.1, 1.0, 10.0),
                 classes: Sequence[int] = tuple(range(2, 21)), phi_offset: float = 0.0,
                 tolerance: float = BOUND_TOLERANCE) -> CheckReport:
    """Lower-bound chain 1{wrong} >= max phi >= Q - log(K)/mu per row and per batch,
    the log-sum-exp sandwich, and phi <= step on a grid.

    ``phi_offset`` shifts every phi value; a positive offset must make the suite fail.
    """
    rng = RngUtils.make_rng(seed)
    trackers = {name: _SlackTracker(name, tolerance) for name in (
        'bound/step-vs-phi', 'bound/lower-bound-row', 'bound/lower-bound-batch',
        'bound/lse-lower', 'bound/lse-upper',
    )}
    grid = np.concatenate([np.linspace(-20.0, 20.0, 40001), np.linspace(-50.0, 50.0, 101), [-1e-12, 1e-12]])

    for kind in SurrogateKind:
        for mu in mus:
            spec = SurrogateSpec.from_name(kind, alpha=0.1, mu=mu)
            tag = f"{kind.value} mu={mu}"

            step = (grid > 0).astype(np.float64)
            values = phi(spec, grid).data + phi_offset
            trackers['bound/step-vs-phi'].observe(step - values, lambda i: f"{tag} x={grid[i]!r}")

            for K in classes:
                scale = rng.choice([0.1, 1.0, 10.0], size=(draws, 1))
                logits = scale * rng.standard_normal((draws, K))
                labels = rng.integers(0, K, size=draws)
                wrong = misclassified(logits, labels).astype(np.float64)
                slack_term = np.log(K) / mu

                with ad.no_graph():
                    q_rows = q_loss_per_sample(logits, labels, spec).data + phi_offset
                    max_phi = max_phi_per_sample(logits, labels, spec).data + phi_offset

                def describe(i, K=K, logits=logits, labels=labels, tag=tag):
                    return f"{tag} K={K} logits={logits[i].tolist()} label={int(labels[i])}"

                trackers['bound/lower-bound-row'].observe(wrong - (q_rows - slack_term), describe)
                trackers['bound/lower-bound-batch'].observe(
                    np.array([wrong.mean() - (q_rows.mean() - slack_term)]),
                    lambda i, K=K, tag=tag: f"{tag} K={K} batch of {draws}",
                )
                trackers['bound/lse-lower'].observe(q_rows - max_phi, describe)
                trackers['bound/lse-upper'].observe(max_phi + slack_term - q_rows, describe)

    report = CheckReport([tracker.result() for tracker in trackers.values()])
    for line in report.lines():
        logger.debug(line)
    return report


def check_counterexample(classes: Sequence[int] = tuple(range(3, 101)),
                         deltas: Sequence[float] = (1e-4, 1e-3, 1e-2)) -> CheckReport:
    """CE must prefer option A and the margin bound option B for every (K, delta)"""
    ce_gap = _SlackTracker('counterexample/ce-prefers-A', 0.0)
    phi_gap = _SlackTracker('counterexample/phi-prefers-B', 0.0)
    for K in classes:
        for delta in deltas:
            result = counterexample_eval(K, delta)
            where = f"K={K} delta={delta}"
            ce_gap.observe(np.array([result.ce_A - result.ce_B]), lambda i, where=where: where)
            phi_gap.observe(np.array([result.phi_B - result.phi_A]), lambda i, where=where: where)

    report = CheckReport()
    for tracker in (ce_gap, phi_gap):
        # a strict preference is required, so zero slack fails
        passed = tracker.worst > 0
        report.results.append(CheckResult(tracker.name, passed, tracker.worst, 0.0, tracker.cases,
                                          None if passed else tracker.witness))
    return report
