"""
Storage manager for run artifacts: metrics CSV, binary checkpoints and the
JSON metadata sidecar
"""

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from exceptions import CheckpointError
from models import ModelSpec

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'SHRPBNC1'
CHECKPOINT_VERSION = 1
# magic, format version, config hash, parameter count; all little-endian
CHECKPOINT_HEADER = struct.Struct('<8sI32sQ')

METRICS_FILE = 'metrics.csv'
CHECKPOINT_FILE = 'best.ckpt'
METADATA_FILE = 'run.json'

METRICS_COLUMNS = [
    'epoch', 'train_ce', 'train_01', 'valid_acc', 'test_acc',
    'flipped_count', 'mean_eps_norm', 'eta', 'wall_ms',
]


@dataclass
class RunRecord:
    """One row of metrics.csv; accuracies and train_01 are fractions in [0, 1]"""

    epoch: int
    train_ce: float
    train_01: float
    valid_acc: float
    test_acc: float
    flipped_count: int
    mean_eps_norm: float
    eta: float
    wall_ms: int

    def to_row(self) -> Dict:
        return asdict(self)


@dataclass(eq=False)
class Checkpoint:
    params: np.ndarray
    config_hash: bytes
    version: int = CHECKPOINT_VERSION
    model_spec: Optional[ModelSpec] = None
    best_epoch: int = 0
    valid_acc: Optional[float] = None

    def to_bytes(self) -> bytes:
        if len(self.config_hash) != 32:
            raise CheckpointError(f"config hash must be 32 bytes, got {len(self.config_hash)}")
        params = np.ascontiguousarray(self.params, dtype='<f8')
        header = CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, self.version, self.config_hash, params.size)
        return header + params.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = '<bytes>') -> 'Checkpoint':
        if len(raw) < CHECKPOINT_HEADER.size:
            raise CheckpointError(f"{source}: {len(raw)} bytes is shorter than the checkpoint header")
        magic, version, config_hash, count = CHECKPOINT_HEADER.unpack_from(raw)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{source}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
        expected = CHECKPOINT_HEADER.size + 8 * count
        if len(raw) != expected:
            raise CheckpointError(f"{source}: expected {expected} bytes for {count} parameters, got {len(raw)}")
        params = np.frombuffer(raw, dtype='<f8', count=count, offset=CHECKPOINT_HEADER.size)
        return cls(params.astype(np.float64), config_hash, version)


def save_checkpoint(path: str, checkpoint: Checkpoint):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(checkpoint.to_bytes())
    logger.info(f"Saved checkpoint {path} ({checkpoint.params.size} parameters, epoch {checkpoint.best_epoch})")


def _read_sidecar(directory: str) -> Dict:
    path = os.path.join(directory, METADATA_FILE)
    if not os.path.exists(path):
        return {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        logger.error(f"Error reading metadata {path}: {e}")
        return {}


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint; model spec and best epoch come from the sibling run.json"""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    checkpoint = Checkpoint.from_bytes(raw, path)

    meta = _read_sidecar(os.path.dirname(os.path.abspath(path)))
    if 'model' in meta:
        checkpoint.model_spec = ModelSpec.from_dict(meta['model'])
        if checkpoint.model_spec.num_params != checkpoint.params.size:
            raise CheckpointError(
                f"{path}: model spec needs {checkpoint.model_spec.num_params} parameters, "
                f"checkpoint holds {checkpoint.params.size}"
            )
    if meta.get('config_hash') and meta['config_hash'] != checkpoint.config_hash.hex():
        raise CheckpointError(f"{path}: config hash disagrees with {METADATA_FILE}")
    checkpoint.best_epoch = int(meta.get('best_epoch', 0))
    checkpoint.valid_acc = meta.get('best_valid_acc')
    return checkpoint


def inspect_checkpoint(path: str) -> Dict:
    checkpoint = load_checkpoint(path)
    return {
        'path': path,
        'magic': CHECKPOINT_MAGIC.decode('ascii'),
        'version': checkpoint.version,
        'config_hash': checkpoint.config_hash.hex(),
        'num_params': int(checkpoint.params.size),
        'model': checkpoint.model_spec.to_dict() if checkpoint.model_spec else None,
        'best_epoch': checkpoint.best_epoch,
        'best_valid_acc': checkpoint.valid_acc,
        'param_l2': float(np.linalg.norm(checkpoint.params)),
    }


class RunStorage:
    """Artifacts of one run directory"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.metrics_file = os.path.join(output_dir, METRICS_FILE)
        self.checkpoint_file = os.path.join(output_dir, CHECKPOINT_FILE)
        self.metadata_file = os.path.join(output_dir, METADATA_FILE)

        os.makedirs(output_dir, exist_ok=True)

    def reset_metrics(self):
        """Start a fresh metrics.csv; a rerun into the same directory replaces it"""
        if os.path.exists(self.metrics_file):
            os.remove(self.metrics_file)
            logger.info(f"Removed previous metrics {self.metrics_file}")

    def append_record(self, record: RunRecord):
        """Append and flush one epoch row"""
        frame = pd.DataFrame([record.to_row()], columns=METRICS_COLUMNS)
        write_header = not os.path.exists(self.metrics_file)
        frame.to_csv(self.metrics_file, mode='a', header=write_header, index=False)

    def load_metrics(self) -> pd.DataFrame:
        if not os.path.exists(self.metrics_file):
            return pd.DataFrame(columns=METRICS_COLUMNS)
        return pd.read_csv(self.metrics_file)

    def save_checkpoint(self, checkpoint: Checkpoint):
        save_checkpoint(self.checkpoint_file, checkpoint)

    def load_checkpoint(self) -> Checkpoint:
        return load_checkpoint(self.checkpoint_file)

    def save_metadata(self, metadata: Dict):
        try:
            with open(self.metadata_file, 'w', encoding='utf-8') as f:
                json.dump(metadata, f, indent=2, sort_keys=True)
            logger.info(f"Saved run metadata to {self.metadata_file}")
        except (OSError, TypeError) as e:
            logger.error(f"Error saving metadata: {e}")

    def load_metadata(self) -> Dict:
        return _read_sidecar(self.output_dir)

    def write_table(self, name: str, frame: pd.DataFrame) -> str:
        path = os.path.join(self.output_dir, name)
        frame.to_csv(path, index=False)
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path


def list_runs(results_dir: str) -> List[Dict]:
    """Every directory under ``results_dir`` holding a run.json, with its metadata"""
    runs = []
    if not os.path.isdir(results_dir):
        return runs
    for root, dirs, files in os.walk(results_dir):
        dirs.sort()
        if METADATA_FILE not in files:
            continue
        meta = _read_sidecar(root)
        runs.append({
            'name': os.path.relpath(root, results_dir).replace(os.sep, '/'),
            'family': meta.get('config', {}).get('optim.family'),
            'seed': meta.get('seed'),
            'best_epoch': meta.get('best_epoch'),
            'best_valid_acc': meta.get('best_valid_acc'),
            'aborted_at_step': meta.get('aborted_at_step'),
            'has_metrics': os.path.exists(os.path.join(root, METRICS_FILE)),
            'has_checkpoint': os.path.exists(os.path.join(root, CHECKPOINT_FILE)),
        })
    return runs
