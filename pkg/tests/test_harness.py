import json
import os
import warnings

import numpy as np
import pandas as pd
import pytest
from scipy.stats import multivariate_normal

from config import Config
from conftest import linearly_separable
from datasets import Batch, blob_centers
from exceptions import ConfigError, PreconditionError, TrainingAborted
from harness import (FAMILY_PRESETS, ExperimentRunner, compare_trainers, flipped_under_perturbation,
                     noise_sweep, prepare_data, resolve_family, train)
from losses import accuracy
from models import MlpModel, ModelSpec
from storage import RunStorage, load_checkpoint
from utils import HashUtils, RngUtils


def one_dim_classifier() -> MlpModel:
    model = MlpModel.zeros(ModelSpec(1, 2))
    # logits (-x, x): class 1 for positive x
    model.set_flat_params(np.array([-1.0, 1.0, 0.0, 0.0]))
    return model


def test_flipped_hand_fixture():
    model = one_dim_classifier()
    batch = Batch(np.array([[1.0]]), np.array([1]), 2)
    checksum = HashUtils.array_checksum(model.flat_params())

    assert flipped_under_perturbation(model, batch, np.array([2.0, -2.0, 0.0, 0.0])) == 1
    assert flipped_under_perturbation(model, batch, np.zeros(4)) == 0
    assert HashUtils.array_checksum(model.flat_params()) == checksum


def test_flipped_ignores_already_wrong_samples():
    model = one_dim_classifier()
    batch = Batch(np.array([[1.0], [2.0]]), np.array([0, 0]), 2)
    assert flipped_under_perturbation(model, batch, np.array([2.0, -2.0, 0.0, 0.0])) == 0


def test_flipped_checks_eps_shape():
    with pytest.raises(PreconditionError):
        flipped_under_perturbation(one_dim_classifier(), Batch(np.ones((1, 1)), np.array([1]), 2), np.zeros(3))


def test_presets_resolve_to_valid_configs():
    for name in FAMILY_PRESETS:
        assert resolve_family(Config(), name).validate() == []
    assert resolve_family(Config(), 'e-bisam-tanh')['optim.sds_ratio'] == 0.5
    with pytest.raises(ConfigError):
        resolve_family(Config(), 'adam')


def test_prepare_data_keeps_held_out_labels_clean(small_config):
    clean = prepare_data(small_config, seed=3)
    noisy = prepare_data(small_config.copy({'data.noise_rate': 0.2, 'data.test_frac': 0.0}), seed=3)

    np.testing.assert_array_equal(clean.valid.labels, noisy.valid.labels)
    assert noisy.noise.changed == round(0.2 * clean.train.n)
    assert noisy.noise.fraction == pytest.approx(noisy.noise.changed / clean.train.n)
    assert clean.noise.changed == 0


def test_prepare_data_test_split(small_config):
    data = prepare_data(small_config.copy({'data.test_frac': 0.2}), seed=0)
    assert data.test.n == 40
    assert data.train.n + data.valid.n == 160
    assert data.test.role == 'test'


def test_zero_epochs_returns_initial_weights(small_config):
    cfg = small_config.copy({'train.epochs': 0})
    history, best = train(cfg, seed=2)

    data = prepare_data(cfg, seed=2)
    initial = MlpModel(ModelSpec(data.train.dim, data.train.K, (8,)), rng=RngUtils.run_streams(2)['init'])
    assert history == []
    assert best.best_epoch == 0
    np.testing.assert_array_equal(best.params, initial.flat_params())


def test_history_shape_and_ranges(small_config):
    history, best = train(small_config.copy({'optim.family': 'sam'}))

    assert [r.epoch for r in history] == [1, 2, 3]
    for r in history:
        assert 0.0 <= r.train_01 <= 1.0 and 0.0 <= r.valid_acc <= 1.0
        assert 0 <= r.flipped_count <= 180
        assert r.mean_eps_norm == pytest.approx(0.05, rel=1e-6)
    assert best.valid_acc == max(r.valid_acc for r in history)
    assert best.best_epoch == min(r.epoch for r in history if r.valid_acc == best.valid_acc)


def test_same_seed_same_metrics(small_config, tmp_path):
    cfg = small_config.copy({'optim.family': 'bisam', 'optim.swp_beta': 0.5, 'optim.sds_ratio': 0.5})
    train(cfg, output_dir=str(tmp_path / 'a'))
    train(cfg, output_dir=str(tmp_path / 'b'))

    a = pd.read_csv(tmp_path / 'a' / 'metrics.csv').drop(columns='wall_ms')
    b = pd.read_csv(tmp_path / 'b' / 'metrics.csv').drop(columns='wall_ms')
    pd.testing.assert_frame_equal(a, b)
    assert (tmp_path / 'a' / 'best.ckpt').read_bytes() == (tmp_path / 'b' / 'best.ckpt').read_bytes()


def test_artifacts_and_checkpoint_round_trip(small_config, tmp_path):
    out = str(tmp_path / 'run')
    history, best = train(small_config, output_dir=out)

    meta = json.loads((tmp_path / 'run' / 'run.json').read_text())
    assert meta['prng'] == 'PCG64'
    assert meta['best_epoch'] == best.best_epoch
    assert meta['config']['optim.family'] == 'sgd'

    checkpoint = load_checkpoint(os.path.join(out, 'best.ckpt'))
    assert checkpoint.config_hash == small_config.config_hash()
    model = MlpModel.zeros(checkpoint.model_spec)
    model.set_flat_params(checkpoint.params)
    valid = prepare_data(small_config, seed=0).valid
    assert accuracy(model.predict(valid.inputs), valid.labels) == pytest.approx(best.valid_acc, abs=1e-12)
    assert len(RunStorage(out).load_metrics()) == len(history)


def test_numeric_failure_aborts_with_step(small_config, tmp_path):
    cfg = small_config.copy({'optim.lr': 1e300, 'train.label_smoothing': 0.0})
    with pytest.raises(TrainingAborted) as info:
        train(cfg, output_dir=str(tmp_path / 'boom'))

    meta = json.loads((tmp_path / 'boom' / 'run.json').read_text())
    assert meta['aborted_at_step'] == info.value.step
    assert info.value.step >= 0


def test_invalid_config_rejected(small_config):
    with pytest.raises(ConfigError):
        ExperimentRunner(small_config.copy({'optim.rho': -1.0}))


def test_sgd_epoch_multiplier(small_config):
    history, _ = train(small_config.copy({'train.epochs': 1, 'train.sgd_epoch_multiplier': 2}))
    assert len(history) == 2


SEPARABLE = {
    'data.n': 2000, 'data.classes': 4, 'data.spread': 0.3, 'train.batch_size': 128,
}


def test_sgd_separates_blobs(tmp_path):
    cfg = Config({**SEPARABLE, 'train.epochs': 20, 'run.output_dir': str(tmp_path)})
    data = prepare_data(cfg, seed=0)
    assert linearly_separable(data.train.inputs[:400], data.train.labels[:400], 4)

    history, _ = train(cfg)
    assert history[-1].train_01 == 0.0


@pytest.mark.parametrize('family', ['sam', 'bisam-log', 'bisam-tanh', 'a-bisam-log', 'e-bisam-log'])
def test_every_family_reaches_zero_training_error(family, tmp_path):
    cfg = resolve_family(Config({**SEPARABLE, 'train.epochs': 50, 'run.output_dir': str(tmp_path)}), family)
    history, _ = train(cfg)
    assert min(r.train_01 for r in history) == 0.0


def bayes_accuracy(cfg: Config, seed: int) -> float:
    """Nearest-mean rule on the known isotropic mixture, scored on the clean validation split"""
    data = prepare_data(cfg, seed)
    raw = data.valid.inputs * data.valid.norm_std + data.valid.norm_mean
    centers = blob_centers(cfg['data.classes'], cfg['data.dim'])
    covariance = cfg['data.spread'] ** 2 * np.eye(cfg['data.dim'])
    densities = np.column_stack([multivariate_normal(c, covariance).logpdf(raw) for c in centers])
    return float(np.mean(np.argmax(densities, axis=1) == data.valid.labels))


def test_noisy_overlapping_blobs_against_bayes_floor(tmp_path):
    seeds = [0, 1, 2, 3, 4]
    cfg = Config({
        'data.n': 4000, 'data.classes': 4, 'data.spread': 1.0, 'data.noise_rate': 0.2,
        'train.epochs': 10, 'train.batch_size': 128, 'run.output_dir': str(tmp_path),
    })
    result = compare_trainers(cfg, ['sam', 'bisam-log'], seeds, workers=2)
    summary = result.summary.set_index('family')
    bayes = np.mean([bayes_accuracy(cfg, seed) for seed in seeds])

    assert not result.failures
    assert summary.loc['sam', 'best_valid_acc_mean'] >= bayes - 0.10
    assert summary.loc['bisam-log', 'best_valid_acc_mean'] >= bayes - 0.10
    assert abs(summary.loc['sam', 'best_valid_acc_mean'] - summary.loc['bisam-log', 'best_valid_acc_mean']) <= 0.02

    flipped = result.flipped.pivot(index='epoch', columns='family', values='flipped_mean')
    if (flipped['bisam-log'] >= flipped['sam']).mean() <= 0.5:
        warnings.warn("BiSAM flipped fewer samples than SAM in most epochs")


def test_compare_single_family_single_seed(small_config):
    result = compare_trainers(small_config, ['sam'], [0])
    history, best = train(resolve_family(small_config, 'sam').copy({'train.seed': 0}))

    assert len(result.summary) == 1
    row = result.summary.iloc[0]
    assert row['runs'] == 1
    assert row['best_valid_acc_mean'] == best.valid_acc
    assert row['best_valid_acc_std'] == 0.0


def test_compare_duplicate_seeds_have_zero_spread(small_config):
    result = compare_trainers(small_config, ['bisam-log'], [1, 1], workers=1)
    assert result.summary.iloc[0]['best_valid_acc_std'] == 0.0


def test_compare_writes_tables(small_config):
    result = compare_trainers(small_config, ['sam', 'bisam-tanh'], [0, 1], workers=2)
    out = small_config['run.output_dir']

    summary = pd.read_csv(os.path.join(out, 'summary.csv'))
    flipped = pd.read_csv(os.path.join(out, 'flipped.csv'))
    assert summary['family'].tolist() == ['bisam-tanh', 'sam']
    assert set(flipped.columns) >= {'family', 'epoch', 'flipped_mean', 'flipped_std'}
    assert len(flipped) == 2 * small_config['train.epochs']
    assert os.path.exists(os.path.join(out, 'sam-seed1', 'metrics.csv'))
    assert len(result.cells) == 4


def test_compare_isolates_failing_cells(small_config):
    cfg = small_config.copy({'optim.lr': 1e300, 'train.label_smoothing': 0.0})
    result = compare_trainers(cfg, ['sgd'], [0, 1])
    assert len(result.failures) == 2
    assert result.summary.empty


def test_noise_sweep_groups_and_rates(small_config):
    result = noise_sweep(small_config, [0.0, 0.2], [0, 1])
    summary = result.summary

    assert summary['noise_rate'].tolist() == [0.0, 0.2]
    assert summary.set_index('noise_rate').loc[0.2, 'noise_fraction_mean'] == pytest.approx(0.2)
    assert summary.set_index('noise_rate').loc[0.0, 'noise_fraction_mean'] == 0.0


def test_noise_sweep_zero_rate_matches_clean_run(small_config):
    result = noise_sweep(small_config, [0.0], [0])
    _, best = train(small_config.copy({'train.seed': 0}))
    assert result.cells.iloc[0]['best_valid_acc'] == best.valid_acc


def test_noise_sweep_lowers_rho_at_heavy_noise(small_config, tmp_path):
    result = noise_sweep(small_config.copy({'optim.family': 'sam'}), [0.2, 0.8], [0])
    cells = result.cells.set_index('noise_rate')

    assert cells.loc[0.8, 'rho'] == 0.01
    assert cells.loc[0.2, 'rho'] == 0.05
    meta = json.loads((tmp_path / 'run' / 'noise-0.8' / 'sam-seed0' / 'run.json').read_text())
    assert meta['config']['optim.rho'] == '0.01'


def test_noise_sweep_custom_rho_map(small_config):
    result = noise_sweep(small_config, [0.2, 0.8], [0], rho_by_rate={0.2: 0.3})
    assert result.cells.set_index('noise_rate')['rho'].to_dict() == {0.2: 0.3, 0.8: 0.05}
    with pytest.raises(PreconditionError):
        noise_sweep(small_config, [0.2], [0], rho_by_rate={0.2: -1.0})


def test_noise_sweep_rejects_bad_rates(small_config):
    with pytest.raises(PreconditionError):
        noise_sweep(small_config, [1.5], [0])


@pytest.mark.parametrize('name', ['load_source', '_run_cell', '_cell_row', '_aggregate', '_run_grid',
                                  '_check_seeds'])
def test_grid_helpers_are_documented(name):
    import harness
    assert getattr(harness, name).__doc__.strip()
