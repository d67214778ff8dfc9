import os

import pandas as pd
import pytest

from main import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFICATION_FAILED, main

SMALL = ['--set', 'data.n=200', '--set', 'data.classes=3', '--set', 'model.hidden=8',
         '--set', 'train.epochs=2', '--set', 'train.batch_size=32']


def run_dir(tmp_path, name):
    return ['--set', f"run.output_dir={tmp_path / name}"]


def test_missing_config_file(tmp_path, capsys):
    missing = str(tmp_path / 'absent.conf')
    assert main(['run', '--config', missing]) == EXIT_CONFIG
    assert missing in capsys.readouterr().err


def test_unknown_override_key(tmp_path):
    assert main(['run', '--set', 'optim.rhoo=1'] + run_dir(tmp_path, 'x')) == EXIT_CONFIG


def test_invalid_value(tmp_path):
    assert main(['run', '--set', 'optim.rho=-1'] + run_dir(tmp_path, 'x')) == EXIT_CONFIG


def test_run_writes_artifacts(tmp_path, capsys):
    assert main(['run'] + SMALL + run_dir(tmp_path, 'run')) == EXIT_OK

    out = capsys.readouterr().out
    assert out.startswith('# effective config\n')
    assert 'train.epochs = 2' in out
    for name in ('metrics.csv', 'best.ckpt', 'run.json', 'sharpbench.log'):
        assert os.path.exists(tmp_path / 'run' / name)
    assert len(pd.read_csv(tmp_path / 'run' / 'metrics.csv')) == 2


def test_run_from_config_file(tmp_path):
    path = tmp_path / 'smoke.conf'
    path.write_text(f"data.n = 200\ntrain.epochs = 1\nrun.output_dir = {tmp_path / 'file-run'}\n")
    assert main(['run', '-c', str(path)]) == EXIT_OK
    assert os.path.exists(tmp_path / 'file-run' / 'best.ckpt')


def test_sam_without_radius_matches_sgd(tmp_path):
    assert main(['run'] + SMALL + run_dir(tmp_path, 'sgd')) == EXIT_OK
    assert main(['run'] + SMALL + run_dir(tmp_path, 'sam')
                + ['--set', 'optim.family=sam', '--set', 'optim.rho=0']) == EXIT_OK

    sgd = pd.read_csv(tmp_path / 'sgd' / 'metrics.csv').drop(columns='wall_ms')
    sam = pd.read_csv(tmp_path / 'sam' / 'metrics.csv').drop(columns='wall_ms')
    pd.testing.assert_frame_equal(sgd, sam)


def test_inspect_checkpoint(tmp_path, capsys):
    main(['run'] + SMALL + run_dir(tmp_path, 'run'))
    capsys.readouterr()

    assert main(['inspect-checkpoint', str(tmp_path / 'run' / 'best.ckpt')]) == EXIT_OK
    out = capsys.readouterr().out
    assert 'magic: SHRPBNC1' in out
    assert 'num_params: 51' in out


def test_inspect_corrupt_checkpoint(tmp_path):
    path = tmp_path / 'bad.ckpt'
    path.write_bytes(b'not a checkpoint')
    assert main(['inspect-checkpoint', str(path)]) == EXIT_CONFIG


def test_compare_with_every_cell_failing(tmp_path, capsys):
    args = ['compare', '--families', 'sgd', '--seeds', '0'] + SMALL + run_dir(tmp_path, 'grid')
    args += ['--set', 'optim.lr=1e300', '--set', 'train.label_smoothing=0']
    assert main(args) == EXIT_NUMERIC
    assert 'failed cell' in capsys.readouterr().out


def test_compare_prints_summary(tmp_path, capsys):
    args = ['compare', '--families', 'sam,bisam-log', '--seeds', '0,1'] + SMALL + run_dir(tmp_path, 'grid')
    assert main(args) == EXIT_OK
    assert 'best_valid_acc_mean' in capsys.readouterr().out
    assert os.path.exists(tmp_path / 'grid' / 'summary.csv')


def test_counterexample_default(capsys):
    assert main(['counterexample']) == EXIT_OK
    out = capsys.readouterr().out
    assert 'CE adversary prefers: A' in out
    assert 'phi adversary prefers: B' in out


def test_counterexample_large_delta_still_scores(capsys):
    assert main(['counterexample', '--K', '3', '--delta', '0.49']) == EXIT_OK
    assert 'phi adversary prefers: B' in capsys.readouterr().out


@pytest.mark.parametrize('delta', ['0.5', '0', '-0.1'])
def test_counterexample_rejects_delta(delta):
    assert main(['counterexample', '--delta', delta]) == EXIT_CONFIG


def test_counterexample_rejects_two_classes():
    assert main(['counterexample', '--K', '2']) == EXIT_CONFIG


def test_check_grad_small(capsys):
    assert main(['check-grad', '--models', '5']) == EXIT_OK
    assert 'all checks passed' in capsys.readouterr().out


def test_check_bounds_small(capsys):
    assert main(['check-bounds', '--draws', '200']) == EXIT_OK
    out = capsys.readouterr().out
    assert 'PASS bound/lower-bound-row' in out
    assert 'PASS counterexample/phi-prefers-B' in out


def test_check_bounds_sabotaged(capsys):
    assert main(['check-bounds', '--draws', '20', '--phi-offset', '0.5']) == EXIT_VERIFICATION_FAILED
    out = capsys.readouterr().out
    assert 'verification FAILED' in out
    assert 'counterexample:' in out


def test_noise_sweep_rho_by_rate(tmp_path):
    args = ['noise-sweep', '--rates', '0.8', '--seeds', '0', '--families', 'sam', '--rho-by-rate', '0.8=0.02']
    assert main(args + SMALL + run_dir(tmp_path, 'sweep')) == EXIT_OK
    cells = pd.read_csv(tmp_path / 'sweep' / 'cells.csv')
    assert cells['rho'].tolist() == [0.02]


def test_noise_sweep_bad_rho_by_rate(tmp_path):
    args = ['noise-sweep', '--rates', '0.8', '--seeds', '0', '--rho-by-rate', '0.8:0.02']
    assert main(args + SMALL + run_dir(tmp_path, 'sweep')) == EXIT_CONFIG
