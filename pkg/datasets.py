"""
Data supply: synthetic generators, IDX and CSV ingestion, label-noise
corruption and deterministic splitting
"""

import gzip
import logging
import os
import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import requests

from exceptions import (DataError, IdxCountMismatchError, IdxFormatError,
                        IdxTruncatedError, PreconditionError)
from utils import RngUtils, SeedLike

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_BASE_URL = 'https://storage.googleapis.com/cvdf-datasets/mnist/'
MNIST_FILES = (
    'train-images-idx3-ubyte.gz',
    'train-labels-idx1-ubyte.gz',
    't10k-images-idx3-ubyte.gz',
    't10k-labels-idx1-ubyte.gz',
)

BLOB_RADIUS = 2.0


class Provenance(str, Enum):
    BLOBS = 'blobs'
    TWO_ARCS = 'two_arcs'
    IDX = 'idx'
    CSV = 'csv'


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labelled sample; ``role`` marks which split it is"""

    inputs: np.ndarray
    labels: np.ndarray
    K: int
    provenance: Provenance
    seed: int = 0
    role: str = 'full'
    norm_mean: Optional[np.ndarray] = None
    norm_std: Optional[np.ndarray] = None

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
            raise DataError(f"inputs {inputs.shape} and labels {labels.shape} disagree")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise DataError(f"labels must lie in [0, {self.K})")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'provenance', Provenance(self.provenance))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray, role: str = None) -> 'Dataset':
        return replace(self, inputs=self.inputs[indices], labels=self.labels[indices],
                       role=role or self.role)

    def with_labels(self, labels: np.ndarray) -> 'Dataset':
        return replace(self, labels=labels)


def blob_centers(K: int, d: int) -> np.ndarray:
    """Simplex vertices when d >= K, else a regular K-gon in the first two axes"""
    centers = np.zeros((K, d))
    if d >= K:
        centers[np.arange(K), np.arange(K)] = BLOB_RADIUS
    else:
        angles = 2.0 * np.pi * np.arange(K) / K
        centers[:, 0] = BLOB_RADIUS * np.cos(angles)
        centers[:, 1] = BLOB_RADIUS * np.sin(angles)
    return centers


def gen_blobs(n: int, K: int, d: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs around ``blob_centers``; same seed, same dataset"""
    if d < 2:
        raise PreconditionError(f"blobs need d >= 2, got {d}")
    if K < 2 or n < K:
        raise PreconditionError(f"blobs need K >= 2 and n >= K, got n={n}, K={K}")
    rng = RngUtils.make_rng(seed)
    labels = rng.permutation(np.arange(n) % K)
    inputs = blob_centers(K, d)[labels] + spread * rng.standard_normal((n, d))
    return Dataset(inputs, labels, K, Provenance.BLOBS, seed=seed)


def gen_two_arcs(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaving half circles, one per class"""
    if n < 2:
        raise PreconditionError(f"two arcs need n >= 2, got {n}")
    rng = RngUtils.make_rng(seed)
    outer = (n + 1) // 2
    inner = n - outer
    theta_outer = np.linspace(0.0, np.pi, outer)
    theta_inner = np.linspace(0.0, np.pi, inner)
    points = np.vstack([
        np.column_stack([np.cos(theta_outer), np.sin(theta_outer)]),
        np.column_stack([1.0 - np.cos(theta_inner), 0.5 - np.sin(theta_inner)]),
    ])
    labels = np.concatenate([np.zeros(outer, dtype=np.int64), np.ones(inner, dtype=np.int64)])
    order = rng.permutation(n)
    inputs = points[order] + noise * rng.standard_normal((n, 2))
    return Dataset(inputs, labels[order], 2, Provenance.TWO_ARCS, seed=seed)


def _read_bytes(path: str) -> bytes:
    try:
        opener = gzip.open if path.endswith('.gz') else open
        with opener(path, 'rb') as f:
            return f.read()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    except (EOFError, gzip.BadGzipFile) as e:
        raise IdxTruncatedError(f"{path}: {e}")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")


def _idx_header(path: str, raw: bytes, expected_magic: int, dims: int) -> Tuple[int, ...]:
    header_size = 4 * (1 + dims)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes, no IDX magic")
    magic = struct.unpack('>I', raw[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(path, magic, expected_magic)
    if len(raw) < header_size:
        raise IdxTruncatedError(f"{path}: header needs {header_size} bytes, file has {len(raw)}")
    sizes = struct.unpack(f'>{dims}I', raw[4:header_size])
    needed = header_size + int(np.prod(sizes))
    if len(raw) < needed:
        raise IdxTruncatedError(f"{path}: expected {needed} bytes, file has {len(raw)}")
    return sizes


def load_idx(images_path: str, labels_path: str, limit: int = 0) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scale to [0, 1]"""
    image_raw = _read_bytes(images_path)
    label_raw = _read_bytes(labels_path)
    count, rows, cols = _idx_header(images_path, image_raw, IDX_IMAGES_MAGIC, 3)
    (label_count,) = _idx_header(labels_path, label_raw, IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise IdxCountMismatchError(
            f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )

    pixels = np.frombuffer(image_raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(label_raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    if limit:
        inputs, labels = inputs[:limit], labels[:limit]
    K = max(2, int(labels.max()) + 1) if labels.size else 2
    logger.info(f"Loaded {inputs.shape[0]} IDX samples of {rows}x{cols} pixels, K={K}")
    return Dataset(inputs, labels, K, Provenance.IDX)


def load_csv(path: str, limit: int = 0) -> Dataset:
    """Read ``f0,...,f{d-1},label`` rows"""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot parse {path}: {e}")

    features = [c for c in frame.columns if c != 'label']
    if 'label' not in frame.columns or features != [f"f{i}" for i in range(len(features))] or not features:
        raise DataError(f"{path}: header must be f0,...,f{{d-1}},label, got {','.join(frame.columns)}")
    if limit:
        frame = frame.iloc[:limit]
    labels = frame['label'].to_numpy()
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise DataError(f"{path}: labels must be integers")
    labels = labels.astype(np.int64)
    K = max(2, int(labels.max()) + 1)
    return Dataset(frame[features].to_numpy(dtype=np.float64), labels, K, Provenance.CSV)


def inject_label_noise(labels: np.ndarray, rate: float, K: int, seed: SeedLike) -> np.ndarray:
    """Corrupt exactly round(rate * n) labels, each to a different class"""
    if not 0.0 <= rate <= 1.0:
        raise PreconditionError(f"noise rate must lie in [0, 1], got {rate}")
    labels = np.array(labels, dtype=np.int64)
    if rate > 0 and K < 2:
        raise PreconditionError("label noise needs K >= 2")
    n = labels.shape[0]
    count = int(round(rate * n))
    if count == 0:
        return labels

    rng = RngUtils.make_rng(seed)
    chosen = rng.choice(n, size=count, replace=False)
    # offsets in [1, K) never map a label onto itself
    offsets = rng.integers(1, K, size=count)
    labels[chosen] = (labels[chosen] + offsets) % K
    return labels


def _partition(n: int, frac: float, seed: SeedLike, what: str) -> Tuple[np.ndarray, np.ndarray]:
    """Shuffle 0..n-1 and hold out round(frac * n) of it, both sides non-empty"""
    if not 0.0 < frac < 1.0:
        raise PreconditionError(f"{what} fraction must lie in (0, 1), got {frac}")
    held = int(round(frac * n))
    if held < 1 or n - held < 1:
        raise PreconditionError(f"n={n} too small for a {what} fraction of {frac}")
    order = RngUtils.make_rng(seed).permutation(n)
    return np.sort(order[held:]), np.sort(order[:held])


def split_train_valid(dataset: Dataset, valid_frac: float, seed: SeedLike) -> Tuple[Dataset, Dataset]:
    """Disjoint (train, valid) split of ``dataset``"""
    keep, held = _partition(dataset.n, valid_frac, seed, 'validation')
    return dataset.subset(keep, 'train'), dataset.subset(held, 'valid')


def split_test(dataset: Dataset, test_frac: float, seed: SeedLike) -> Tuple[Dataset, Dataset]:
    """Disjoint (rest, test) split; the rest keeps its role"""
    keep, held = _partition(dataset.n, test_frac, seed, 'test')
    return dataset.subset(keep), dataset.subset(held, 'test')


def normalize(train: Dataset, *others: Dataset) -> List[Dataset]:
    """Standardise every split with the training split's per-feature statistics"""
    mean = train.inputs.mean(axis=0)
    std = train.inputs.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return [
        replace(d, inputs=(d.inputs - mean) / std, norm_mean=mean, norm_std=std)
        for d in (train,) + others
    ]


def fetch_idx(base_url: str = MNIST_BASE_URL, names: Sequence[str] = MNIST_FILES,
              dest_dir: str = 'data', session: requests.Session = None) -> List[str]:
    """Download IDX files into ``dest_dir``; returns the local paths"""
    os.makedirs(dest_dir, exist_ok=True)
    session = session or requests.Session()
    paths = []
    for name in names:
        url = base_url.rstrip('/') + '/' + name
        target = os.path.join(dest_dir, name)
        if os.path.exists(target):
            logger.info(f"Already present: {target}")
            paths.append(target)
            continue
        try:
            response = session.get(url, timeout=60)
            response.raise_for_status()
        except requests.RequestException as e:
            logger.error(f"Download failed for {url}: {e}")
            raise DataError(f"download failed for {url}: {e}")
        with open(target, 'wb') as f:
            f.write(response.content)
        logger.info(f"Downloaded {url} -> {target} ({len(response.content)} bytes)")
        paths.append(target)
    return paths


@dataclass(frozen=True, eq=False)
class Batch:
    """Minibatch drawn from one split; only ``train`` batches may drive gradients"""

    inputs: np.ndarray
    labels: np.ndarray
    K: int
    role: str = 'train'

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def make_batch(dataset: Dataset, indices: np.ndarray = None) -> Batch:
    """Rows of ``dataset`` at ``indices``, or all of it"""
    if indices is None:
        return Batch(dataset.inputs, dataset.labels, dataset.K, dataset.role)
    return Batch(dataset.inputs[indices], dataset.labels[indices], dataset.K, dataset.role)
