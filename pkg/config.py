"""
Run configuration: typed dotted keys with documented defaults, read from a
flat ``key = value`` file, environment variables and ``--set`` overrides
"""

import logging
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from exceptions import ConfigError
from losses import SurrogateKind, SurrogateSpec
from optim.base_trainer import Family, PerturbConfig, PerturbLoss
from optim.perturbation import SwpSemantics
from optim.schedule import Schedule, ScheduleKind, SgdState
from utils import HashUtils, ValidationUtils

logger = logging.getLogger(__name__)

DATA_SOURCES = ('blobs', 'two_arcs', 'idx', 'csv')


class Config:
    """Configuration class for one training run"""

    # key: (type, default)
    SCHEMA: Dict[str, Tuple[str, Any]] = {
        'data.source': ('str', 'blobs'),
        'data.n': ('int', 2000),
        'data.classes': ('int', 4),
        'data.dim': ('int', 2),
        'data.spread': ('float', 0.3),
        'data.images_path': ('str', ''),
        'data.labels_path': ('str', ''),
        'data.csv_path': ('str', ''),
        'data.limit': ('int', 0),
        'data.normalize': ('bool', True),
        'data.valid_frac': ('float', 0.1),
        'data.test_frac': ('float', 0.0),
        'data.noise_rate': ('float', 0.0),
        'model.hidden': ('int_list', (32,)),
        'optim.family': ('str', 'sgd'),
        'optim.rho': ('float', 0.05),
        'optim.adaptive': ('bool', False),
        'optim.swp_beta': ('opt_float', None),
        'optim.swp_semantics': ('str', 'literal'),
        'optim.sds_ratio': ('opt_float', None),
        'optim.grad_norm_floor': ('float', 1e-12),
        'optim.perturb_loss': ('str', 'q'),
        'optim.lr': ('float', 0.1),
        'optim.momentum': ('float', 0.9),
        'optim.weight_decay': ('float', 5e-4),
        'optim.schedule': ('str', 'cosine'),
        'surrogate.kind': ('str', 'shifted_log'),
        'surrogate.alpha': ('float', 0.1),
        'surrogate.mu': ('opt_float', None),
        'train.epochs': ('int', 20),
        'train.batch_size': ('int', 128),
        'train.label_smoothing': ('float', 0.1),
        'train.seed': ('int', 0),
        'train.sgd_epoch_multiplier': ('int', 1),
        'run.output_dir': ('str', 'runs/default'),
        'run.workers': ('int', 1),
    }

    ENV_OVERRIDES = {
        'SHARPBENCH_OUTPUT_DIR': 'run.output_dir',
        'SHARPBENCH_WORKERS': 'run.workers',
    }

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self.values: Dict[str, Any] = {key: default for key, (_, default) in self.SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Iterable[str] = (),
             environ: Optional[Mapping[str, str]] = None) -> 'Config':
        """Defaults < file < environment < ``key=value`` overrides"""
        config = cls()
        if path:
            if not os.path.isfile(path):
                raise ConfigError(f"config file not found: {path}")
            with open(path, 'r', encoding='utf-8') as f:
                for key, value in cls.parse_text(f.read(), path).items():
                    config.set(key, value)
        environ = os.environ if environ is None else environ
        for env_name, key in cls.ENV_OVERRIDES.items():
            if environ.get(env_name):
                config.set(key, environ[env_name])
        for item in overrides:
            if '=' not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split('=', 1)
            config.set(key.strip(), value.strip())
        return config

    @staticmethod
    def parse_text(text: str, source: str = '<config>') -> Dict[str, str]:
        """``# comment`` lines, blank lines and ``section.key = scalar`` lines"""
        values = {}
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise ConfigError(f"{source}:{number}: expected 'key = value', got {line!r}")
            key, value = line.split('=', 1)
            values[key.strip()] = value.strip()
        return values

    def _coerce(self, key: str, kind: str, value: Any) -> Any:
        raw = value.strip() if isinstance(value, str) else value
        try:
            if kind == 'str':
                return str(raw)
            if kind == 'int':
                if isinstance(raw, float) and not raw.is_integer():
                    raise ValueError(raw)
                return int(raw)
            if kind == 'float':
                return float(raw)
            if kind == 'opt_float':
                if raw is None or (isinstance(raw, str) and raw.lower() in ('', 'none')):
                    return None
                return float(raw)
            if kind == 'bool':
                if isinstance(raw, bool):
                    return raw
                lowered = str(raw).lower()
                if lowered in ('true', 'yes', '1', 'on'):
                    return True
                if lowered in ('false', 'no', '0', 'off'):
                    return False
                raise ValueError(raw)
            if kind == 'int_list':
                if isinstance(raw, str):
                    return tuple(int(part) for part in raw.split(',') if part.strip())
                if isinstance(raw, int):
                    return (raw,)
                return tuple(int(part) for part in raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot read {value!r} as {kind}")
        raise ConfigError(f"{key}: unknown type {kind}")

    def set(self, key: str, value: Any):
        if key not in self.SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = self._coerce(key, self.SCHEMA[key][0], value)

    def get(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def copy(self, overrides: Optional[Mapping[str, Any]] = None) -> 'Config':
        clone = Config()
        clone.values = dict(self.values)
        for key, value in (overrides or {}).items():
            clone.set(key, value)
        return clone

    def validate(self) -> List[str]:
        """Return every problem found; empty means the config is usable"""
        errors: List[str] = []
        v = self.values
        check = ValidationUtils.check_range
        ValidationUtils.check_choice(errors, 'data.source', v['data.source'], DATA_SOURCES)
        check(errors, 'data.n', v['data.n'], 2)
        check(errors, 'data.classes', v['data.classes'], 2)
        check(errors, 'data.spread', v['data.spread'], 0.0)
        check(errors, 'data.limit', v['data.limit'], 0)
        check(errors, 'data.valid_frac', v['data.valid_frac'], 0.0, 1.0, low_open=True, high_open=True)
        check(errors, 'data.test_frac', v['data.test_frac'], 0.0, 1.0, high_open=True)
        check(errors, 'data.noise_rate', v['data.noise_rate'], 0.0, 1.0)
        if v['data.source'] == 'blobs':
            check(errors, 'data.dim', v['data.dim'], 2)
        if v['data.source'] == 'idx' and not (v['data.images_path'] and v['data.labels_path']):
            errors.append("data.source=idx needs data.images_path and data.labels_path")
        if v['data.source'] == 'csv' and not v['data.csv_path']:
            errors.append("data.source=csv needs data.csv_path")
        if any(width < 1 for width in v['model.hidden']):
            errors.append(f"model.hidden widths must be positive, got {v['model.hidden']}")

        ValidationUtils.check_choice(errors, 'optim.family', v['optim.family'], [f.value for f in Family])
        check(errors, 'optim.rho', v['optim.rho'], 0.0)
        check(errors, 'optim.swp_beta', v['optim.swp_beta'], 0.0, 1.0, high_open=True)
        ValidationUtils.check_choice(errors, 'optim.swp_semantics', v['optim.swp_semantics'],
                                     [s.value for s in SwpSemantics])
        check(errors, 'optim.sds_ratio', v['optim.sds_ratio'], 0.0, 1.0, low_open=True)
        check(errors, 'optim.grad_norm_floor', v['optim.grad_norm_floor'], 0.0, low_open=True)
        ValidationUtils.check_choice(errors, 'optim.perturb_loss', v['optim.perturb_loss'],
                                     [p.value for p in PerturbLoss])
        check(errors, 'optim.lr', v['optim.lr'], 0.0, low_open=True)
        check(errors, 'optim.momentum', v['optim.momentum'], 0.0, 1.0, high_open=True)
        check(errors, 'optim.weight_decay', v['optim.weight_decay'], 0.0)
        ValidationUtils.check_choice(errors, 'optim.schedule', v['optim.schedule'],
                                     [s.value for s in ScheduleKind])

        ValidationUtils.check_choice(errors, 'surrogate.kind', v['surrogate.kind'],
                                     [k.value for k in SurrogateKind])
        check(errors, 'surrogate.alpha', v['surrogate.alpha'], 0.0, low_open=True)
        check(errors, 'surrogate.mu', v['surrogate.mu'], 0.0, low_open=True)

        check(errors, 'train.epochs', v['train.epochs'], 0)
        check(errors, 'train.batch_size', v['train.batch_size'], 1)
        check(errors, 'train.label_smoothing', v['train.label_smoothing'], 0.0, 1.0, high_open=True)
        check(errors, 'train.sgd_epoch_multiplier', v['train.sgd_epoch_multiplier'], 1)
        check(errors, 'run.workers', v['run.workers'], 1)
        return errors

    def warnings(self) -> List[str]:
        notes = []
        v = self.values
        if v['optim.swp_beta'] == 0.0 and v['optim.swp_semantics'] == SwpSemantics.LITERAL.value:
            notes.append("optim.swp_beta=0 under literal SWP selects no coordinates: eps is always zero")
        if v['optim.perturb_loss'] != PerturbLoss.Q.value and v['optim.family'] != Family.BISAM.value:
            notes.append(f"optim.perturb_loss only applies to bisam, ignored for {v['optim.family']}")
        return notes

    @staticmethod
    def render(value: Any) -> str:
        if value is None:
            return 'none'
        if isinstance(value, bool):
            return 'true' if value else 'false'
        if isinstance(value, tuple):
            return ','.join(str(part) for part in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def to_text(self, include_run: bool = True) -> str:
        """Canonical sorted ``key = value`` echo"""
        lines = [
            f"{key} = {self.render(value)}"
            for key, value in sorted(self.values.items())
            if include_run or not key.startswith('run.')
        ]
        return '\n'.join(lines) + '\n'

    def to_dict(self) -> Dict[str, str]:
        return {key: self.render(value) for key, value in sorted(self.values.items())}

    def config_hash(self) -> bytes:
        """SHA-256 of the experiment keys (run.* excluded); 32 bytes"""
        return HashUtils.config_digest(self.to_text(include_run=False))

    def surrogate_spec(self) -> SurrogateSpec:
        return SurrogateSpec.from_name(self['surrogate.kind'], self['surrogate.alpha'], self['surrogate.mu'])

    def perturb_config(self) -> PerturbConfig:
        return PerturbConfig(
            family=Family(self['optim.family']),
            rho=self['optim.rho'],
            adaptive=self['optim.adaptive'],
            swp_beta=self['optim.swp_beta'],
            swp_semantics=SwpSemantics(self['optim.swp_semantics']),
            sds_ratio=self['optim.sds_ratio'],
            surrogate=self.surrogate_spec(),
            grad_norm_floor=self['optim.grad_norm_floor'],
            perturb_loss=PerturbLoss(self['optim.perturb_loss']),
        )

    def schedule(self, total_steps: int) -> Schedule:
        return Schedule(ScheduleKind(self['optim.schedule']), self['optim.lr'], max(1, total_steps))

    def sgd_state(self, dim: int) -> SgdState:
        return SgdState.zeros(dim, self['optim.momentum'], self['optim.weight_decay'])

    def effective_epochs(self) -> int:
        epochs = self['train.epochs']
        if self['optim.family'] == Family.SGD.value:
            epochs *= self['train.sgd_epoch_multiplier']
        return epochs
