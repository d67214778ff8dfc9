import numpy as np
import pytest
from scipy.optimize import linprog

from config import Config
from datasets import gen_blobs, make_batch


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in Config.ENV_OVERRIDES:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def small_config(tmp_path):
    return Config({
        'data.n': 200,
        'data.classes': 3,
        'data.spread': 0.3,
        'model.hidden': '8',
        'train.epochs': 3,
        'train.batch_size': 32,
        'run.output_dir': str(tmp_path / 'run'),
    })


@pytest.fixture
def blob_batch():
    return make_batch(gen_blobs(64, 3, 2, 0.3, seed=5).subset(np.arange(64), 'train'))


def linearly_separable(inputs: np.ndarray, labels: np.ndarray, classes: int) -> bool:
    """Feasibility of (w_y - w_j).x + (b_y - b_j) >= 1 for every sample and j != y"""
    n, d = inputs.shape
    width = d + 1
    augmented = np.hstack([inputs, np.ones((n, 1))])
    rows = []
    for i in range(n):
        for j in range(classes):
            if j == labels[i]:
                continue
            row = np.zeros(classes * width)
            row[labels[i] * width:(labels[i] + 1) * width] = -augmented[i]
            row[j * width:(j + 1) * width] = augmented[i]
            rows.append(row)
    result = linprog(np.zeros(classes * width), A_ub=np.array(rows), b_ub=-np.ones(len(rows)),
                     bounds=(None, None), method='highs')
    return result.status == 0
