"""
Experiment engine: seeded training runs, per-epoch metrics, validation-based
model selection, multi-seed comparisons and label-noise sweeps
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from datasets import (Batch, Dataset, gen_blobs, gen_two_arcs, inject_label_noise, load_csv,
                      load_idx, make_batch, normalize, split_test, split_train_valid)
from exceptions import ConfigError, NumericError, PreconditionError, TrainingAborted
from losses import accuracy, count_flipped, zero_one_loss
from models import MlpModel, ModelSpec
from optim import build_trainer
from storage import Checkpoint, RunRecord, RunStorage
from utils import PRNG_ALGORITHM, RngUtils, Stopwatch, __version__

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'summary.csv'
FLIPPED_FILE = 'flipped.csv'
CELLS_FILE = 'cells.csv'

EFFICIENT_BETA = 0.5
EFFICIENT_GAMMA = 0.5
# heavy label noise needs a smaller radius to train at all
DEFAULT_RHO_BY_RATE = {0.8: 0.01}

# named cells for compare / noise-sweep; each is a set of config overrides
FAMILY_PRESETS: Dict[str, Dict[str, object]] = {
    'sgd': {'optim.family': 'sgd'},
    'sam': {'optim.family': 'sam'},
    'asam': {'optim.family': 'sam', 'optim.adaptive': True},
    'esam': {'optim.family': 'sam', 'optim.swp_beta': EFFICIENT_BETA, 'optim.sds_ratio': EFFICIENT_GAMMA},
    'bisam-log': {'optim.family': 'bisam', 'surrogate.kind': 'shifted_log'},
    'bisam-tanh': {'optim.family': 'bisam', 'surrogate.kind': 'tanh'},
    'a-bisam-log': {'optim.family': 'bisam', 'surrogate.kind': 'shifted_log', 'optim.adaptive': True},
    'a-bisam-tanh': {'optim.family': 'bisam', 'surrogate.kind': 'tanh', 'optim.adaptive': True},
    'e-bisam-log': {'optim.family': 'bisam', 'surrogate.kind': 'shifted_log',
                    'optim.swp_beta': EFFICIENT_BETA, 'optim.sds_ratio': EFFICIENT_GAMMA},
    'e-bisam-tanh': {'optim.family': 'bisam', 'surrogate.kind': 'tanh',
                     'optim.swp_beta': EFFICIENT_BETA, 'optim.sds_ratio': EFFICIENT_GAMMA},
}


def resolve_family(cfg: Config, name: str) -> Config:
    if name not in FAMILY_PRESETS:
        raise ConfigError(f"unknown family {name!r}; choose from {', '.join(FAMILY_PRESETS)}")
    return cfg.copy(FAMILY_PRESETS[name])


@dataclass
class NoiseReport:
    rate: float
    changed: int
    fraction: float


@dataclass(eq=False)
class PreparedData:
    train: Dataset
    valid: Dataset
    test: Optional[Dataset]
    noise: NoiseReport


def load_source(cfg: Config, seed: int) -> Dataset:
    """Full dataset named by ``data.source``, before any split"""
    source = cfg['data.source']
    if source == 'blobs':
        return gen_blobs(cfg['data.n'], cfg['data.classes'], cfg['data.dim'], cfg['data.spread'], seed)
    if source == 'two_arcs':
        return gen_two_arcs(cfg['data.n'], cfg['data.spread'], seed)
    if source == 'idx':
        return load_idx(cfg['data.images_path'], cfg['data.labels_path'], cfg['data.limit'])
    if source == 'csv':
        return load_csv(cfg['data.csv_path'], cfg['data.limit'])
    raise ConfigError(f"data.source={source!r} is not a known source")


def prepare_data(cfg: Config, seed: int) -> PreparedData:
    """Build the splits; label noise touches the training split only"""
    streams = RngUtils.run_streams(seed)
    full = load_source(cfg, seed)

    test = None
    if cfg['data.test_frac'] > 0:
        full, test = split_test(full, cfg['data.test_frac'], streams['split'])
    train, valid = split_train_valid(full, cfg['data.valid_frac'], streams['split'])

    rate = cfg['data.noise_rate']
    noisy = inject_label_noise(train.labels, rate, train.K, streams['noise'])
    changed = int(np.sum(noisy != train.labels))
    if changed:
        train = train.with_labels(noisy)
        logger.info(f"Corrupted {changed} of {train.n} training labels (rate {rate})")

    if cfg['data.normalize']:
        splits = normalize(train, valid, *([test] if test is not None else []))
        train, valid = splits[0], splits[1]
        test = splits[2] if test is not None else None

    noise = NoiseReport(rate=rate, changed=changed, fraction=changed / train.n)
    return PreparedData(train, valid, test, noise)


def flipped_under_perturbation(model: MlpModel, batch: Batch, eps: np.ndarray) -> int:
    """Samples right at w and wrong at w + eps; the weights come back bit-identical"""
    saved = model.flat_params()
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != saved.shape:
        raise PreconditionError(f"eps shape {eps.shape} != parameter shape {saved.shape}")
    clean = model.predict(batch.inputs)
    model.set_flat_params(saved + eps)
    try:
        perturbed = model.predict(batch.inputs)
    finally:
        model.set_flat_params(saved)
    return count_flipped(clean, perturbed, batch.labels)


class ExperimentRunner:
    """One seeded training run and its artifacts"""

    def __init__(self, cfg: Config, seed: Optional[int] = None, storage: Optional[RunStorage] = None):
        errors = cfg.validate()
        if errors:
            raise ConfigError('; '.join(errors))
        for note in cfg.warnings():
            logger.warning(note)
        self.cfg = cfg
        self.seed = cfg['train.seed'] if seed is None else seed
        self.storage = storage
        self.data: Optional[PreparedData] = None
        self.model: Optional[MlpModel] = None

    def evaluate(self, dataset: Optional[Dataset]) -> float:
        if dataset is None:
            return float('nan')
        return accuracy(self.model.predict(dataset.inputs), dataset.labels)

    def metadata(self, best: Checkpoint, aborted_at: Optional[int] = None) -> Dict:
        noise = self.data.noise if self.data else None
        return {
            'config': self.cfg.to_dict(),
            'config_hash': self.cfg.config_hash().hex(),
            'seed': self.seed,
            'prng': PRNG_ALGORITHM,
            'version': __version__,
            'model': self.model.spec.to_dict() if self.model else None,
            'best_epoch': best.best_epoch if best else None,
            'best_valid_acc': best.valid_acc if best else None,
            'noise': None if noise is None else {
                'rate': noise.rate, 'changed': noise.changed, 'fraction': noise.fraction,
            },
            'aborted_at_step': aborted_at,
        }

    def train(self) -> Tuple[List[RunRecord], Checkpoint]:
        cfg = self.cfg
        logger.info(f"Starting {cfg['optim.family']} run, seed {self.seed}")
        streams = RngUtils.run_streams(self.seed)
        self.data = prepare_data(cfg, self.seed)
        train = self.data.train

        spec = ModelSpec(train.dim, train.K, cfg['model.hidden'])
        self.model = MlpModel(spec, rng=streams['init'])
        batch_size = cfg['train.batch_size']
        batches_per_epoch = math.ceil(train.n / batch_size)
        epochs = cfg.effective_epochs()
        schedule = cfg.schedule(epochs * batches_per_epoch)
        trainer = build_trainer(self.model, cfg.perturb_config(), cfg.sgd_state(spec.num_params),
                                schedule, cfg['train.label_smoothing'], rng=streams['swp'])

        config_hash = cfg.config_hash()
        best = Checkpoint(self.model.flat_params(), config_hash, model_spec=spec, best_epoch=0,
                          valid_acc=self.evaluate(self.data.valid))
        best_acc = -1.0
        history: List[RunRecord] = []
        if self.storage:
            self.storage.reset_metrics()

        try:
            for epoch in range(1, epochs + 1):
                watch = Stopwatch()
                order = streams['shuffle'].permutation(train.n)
                ce_sum, flipped, eps_norms, eta = 0.0, 0, [], 0.0
                for start in range(0, train.n, batch_size):
                    # last batch may be short; it is kept and weighted by size
                    report = trainer.step(make_batch(train, order[start:start + batch_size]))
                    ce_sum += report.loss * report.batch_size
                    flipped += report.flipped
                    eps_norms.append(report.eps_norm)
                    eta = report.eta

                valid_acc = self.evaluate(self.data.valid)
                record = RunRecord(
                    epoch=epoch,
                    train_ce=ce_sum / train.n,
                    train_01=zero_one_loss(self.model.predict(train.inputs), train.labels),
                    valid_acc=valid_acc,
                    test_acc=self.evaluate(self.data.test),
                    flipped_count=flipped,
                    mean_eps_norm=float(np.mean(eps_norms)),
                    eta=eta,
                    wall_ms=watch.elapsed_ms(),
                )
                history.append(record)
                if self.storage:
                    self.storage.append_record(record)
                logger.info(
                    f"epoch {epoch}/{epochs} ce={record.train_ce:.4f} train_01={record.train_01:.4f} "
                    f"valid={valid_acc:.4f} flipped={flipped}"
                )
                # strict improvement: the earliest epoch wins ties
                if valid_acc > best_acc:
                    best_acc = valid_acc
                    best = Checkpoint(self.model.flat_params(), config_hash, model_spec=spec,
                                      best_epoch=epoch, valid_acc=valid_acc)
        except NumericError as e:
            step = trainer.sgd.step_count
            logger.error(f"Run aborted at step {step}: {e}")
            if self.storage:
                self.storage.save_metadata(self.metadata(best, aborted_at=step))
            raise TrainingAborted(step, e)

        if self.storage:
            self.storage.save_checkpoint(best)
            self.storage.save_metadata(self.metadata(best))
        logger.info(f"Run finished: best epoch {best.best_epoch}, valid accuracy {best.valid_acc:.4f}")
        return history, best


def train(cfg: Config, seed: Optional[int] = None,
          output_dir: Optional[str] = None) -> Tuple[List[RunRecord], Checkpoint]:
    storage = RunStorage(output_dir) if output_dir else None
    return ExperimentRunner(cfg, seed, storage).train()


@dataclass(eq=False)
class Cell:
    keys: Dict[str, object]
    cfg: Config
    output_dir: str


@dataclass(eq=False)
class CellResult:
    keys: Dict[str, object]
    history: List[RunRecord] = field(default_factory=list)
    best: Optional[Checkpoint] = None
    noise: Optional[NoiseReport] = None
    error: Optional[str] = None


@dataclass(eq=False)
class ComparisonResult:
    summary: pd.DataFrame
    flipped: pd.DataFrame
    cells: pd.DataFrame
    failures: List[CellResult]


def _run_cell(cell: Cell) -> CellResult:
    """Train one grid cell; a failure is recorded, not raised"""
    try:
        runner = ExperimentRunner(cell.cfg, storage=RunStorage(cell.output_dir))
        history, best = runner.train()
        return CellResult(cell.keys, history, best, runner.data.noise)
    except Exception as e:
        logger.error(f"Cell {cell.keys} failed: {e}")
        return CellResult(cell.keys, error=str(e))


def _cell_row(result: CellResult) -> Dict:
    """One cells.csv row for a finished cell"""
    best_epoch = result.best.best_epoch
    best_record = result.history[best_epoch - 1] if best_epoch > 0 else None
    return {
        **result.keys,
        'best_epoch': best_epoch,
        'best_valid_acc': result.best.valid_acc,
        'best_test_acc': best_record.test_acc if best_record else float('nan'),
        'final_train_01': result.history[-1].train_01 if result.history else float('nan'),
        'mean_flipped': float(np.mean([r.flipped_count for r in result.history])) if result.history else 0.0,
        'noise_fraction': result.noise.fraction,
    }


def _aggregate(results: List[CellResult], group_keys: List[str]) -> Tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Mean and population std per group: (summary, flipped per epoch, cells)"""
    done = [r for r in results if r.error is None]
    cells = pd.DataFrame([_cell_row(r) for r in done])
    if cells.empty:
        return cells, pd.DataFrame(), pd.DataFrame()
    cells = cells.sort_values(group_keys + ['seed']).reset_index(drop=True)

    metrics = ['best_valid_acc', 'best_test_acc', 'final_train_01', 'mean_flipped', 'noise_fraction']
    grouped = cells.groupby(group_keys, sort=True)
    summary = grouped[metrics].agg(['mean', lambda s: s.std(ddof=0)])
    summary.columns = [f"{metric}_{'mean' if stat == 'mean' else 'std'}" for metric, stat in summary.columns]
    summary.insert(0, 'runs', grouped.size())
    summary = summary.reset_index()

    per_epoch = pd.DataFrame([
        {**r.keys, 'epoch': rec.epoch, 'flipped_count': rec.flipped_count}
        for r in done for rec in r.history
    ])
    if per_epoch.empty:
        flipped = pd.DataFrame(columns=group_keys + ['epoch', 'flipped_mean', 'flipped_std'])
    else:
        flipped = (per_epoch.groupby(group_keys + ['epoch'], sort=True)['flipped_count']
                   .agg(flipped_mean='mean', flipped_std=lambda s: s.std(ddof=0))
                   .reset_index())
    return summary, flipped, cells


def _run_grid(cells: List[Cell], workers: int, group_keys: List[str], output_dir: str) -> ComparisonResult:
    """Run ``cells`` on a worker pool and write the grid tables under ``output_dir``"""
    logger.info(f"Running {len(cells)} cells on {workers} worker(s)")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_run_cell, cells))

    failures = [r for r in results if r.error is not None]
    for failure in failures:
        logger.error(f"Excluded failed cell {failure.keys}: {failure.error}")
    summary, flipped, table = _aggregate(results, group_keys)

    storage = RunStorage(output_dir)
    if not summary.empty:
        storage.write_table(SUMMARY_FILE, summary)
        storage.write_table(FLIPPED_FILE, flipped)
        storage.write_table(CELLS_FILE, table)
    return ComparisonResult(summary, flipped, table, failures)


def _check_seeds(seeds: Sequence[int]):
    """At least one seed; a single seed only warns"""
    if not seeds:
        raise PreconditionError("at least one seed is required")
    if len(seeds) < 2:
        logger.warning("A single seed gives no spread; std columns will be 0")


def compare_trainers(cfg_base: Config, families: Sequence[str], seeds: Sequence[int],
                     workers: Optional[int] = None) -> ComparisonResult:
    """Mean and spread of best accuracy per family over seeds, plus per-epoch flipped counts"""
    _check_seeds(seeds)
    if not families:
        raise PreconditionError("at least one family is required")
    errors = cfg_base.validate()
    if errors:
        raise ConfigError('; '.join(errors))

    base_dir = cfg_base['run.output_dir']
    cells = []
    for family in families:
        family_cfg = resolve_family(cfg_base, family)
        for seed in seeds:
            output_dir = os.path.join(base_dir, f"{family}-seed{seed}")
            cell_cfg = family_cfg.copy({'train.seed': seed, 'run.output_dir': output_dir})
            cells.append(Cell({'family': family, 'seed': seed}, cell_cfg, output_dir))
    return _run_grid(cells, workers or cfg_base['run.workers'], ['family'], base_dir)


def noise_sweep(cfg: Config, rates: Sequence[float], seeds: Sequence[int],
                families: Optional[Sequence[str]] = None,
                workers: Optional[int] = None,
                rho_by_rate: Optional[Dict[float, float]] = None) -> ComparisonResult:
    """compare_trainers repeated per label-noise rate; validation and test stay clean

    ``rho_by_rate`` replaces optim.rho for the rates it lists (default: rho 0.01
    at rate 0.8). The radius each cell trained with lands in its run.json and in
    the ``rho`` column of cells.csv.
    """
    _check_seeds(seeds)
    bad = [rate for rate in rates if not 0.0 <= rate <= 1.0]
    if not rates or bad:
        raise PreconditionError(f"noise rates must be a non-empty subset of [0, 1], got {list(rates)}")
    rho_by_rate = DEFAULT_RHO_BY_RATE if rho_by_rate is None else rho_by_rate
    negative = {rate: rho for rate, rho in rho_by_rate.items() if rho < 0}
    if negative:
        raise PreconditionError(f"per-rate rho must be non-negative, got {negative}")
    errors = cfg.validate()
    if errors:
        raise ConfigError('; '.join(errors))

    base_dir = cfg['run.output_dir']
    cells = []
    for rate in rates:
        for family in (families or [None]):
            family_cfg = resolve_family(cfg, family) if family else cfg
            label = family or cfg['optim.family']
            for seed in seeds:
                output_dir = os.path.join(base_dir, f"noise-{rate:g}", f"{label}-seed{seed}")
                overrides = {'data.noise_rate': rate, 'train.seed': seed, 'run.output_dir': output_dir}
                if rate in rho_by_rate:
                    overrides['optim.rho'] = rho_by_rate[rate]
                cell_cfg = family_cfg.copy(overrides)
                keys = {'noise_rate': rate, 'family': label, 'seed': seed, 'rho': cell_cfg['optim.rho']}
                cells.append(Cell(keys, cell_cfg, output_dir))
    return _run_grid(cells, workers or cfg['run.workers'], ['noise_rate', 'family'], base_dir)
