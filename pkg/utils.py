"""
Utility helpers shared across sharpbench
"""

import hashlib
import logging
import os
import time
from typing import Dict, List, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

__version__ = '0.3.0'

PRNG_ALGORITHM = 'PCG64'

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


class RngUtils:
    """Seeded random streams; every stochastic choice draws from one of these"""

    # one independent child stream per concern
    STREAMS = ('data', 'split', 'noise', 'init', 'shuffle', 'swp')

    @staticmethod
    def make_rng(seed: SeedLike) -> np.random.Generator:
        if isinstance(seed, np.random.Generator):
            return seed
        return np.random.Generator(np.random.PCG64(seed))

    @staticmethod
    def run_streams(seed: int) -> Dict[str, np.random.Generator]:
        children = np.random.SeedSequence(seed).spawn(len(RngUtils.STREAMS))
        return {
            name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(RngUtils.STREAMS, children)
        }


class HashUtils:
    """Stable digests for configs and parameter arrays"""

    @staticmethod
    def config_digest(text: str) -> bytes:
        return hashlib.sha256(text.encode('utf-8')).digest()

    @staticmethod
    def array_checksum(values: np.ndarray) -> str:
        data = np.ascontiguousarray(values, dtype='<f8').tobytes()
        return hashlib.sha256(data).hexdigest()


class ValidationUtils:
    """Range checks that collect messages instead of raising"""

    @staticmethod
    def check_range(errors: List[str], key: str, value: Optional[float],
                    low: float = None, high: float = None,
                    low_open: bool = False, high_open: bool = False):
        if value is None:
            return
        if low is not None and (value < low or (low_open and value == low)):
            bracket = '(' if low_open else '['
            errors.append(f"{key}={value} must be in {bracket}{low}, {high if high is not None else 'inf'}")
        elif high is not None and (value > high or (high_open and value == high)):
            bracket = ')' if high_open else ']'
            errors.append(f"{key}={value} must be in [{low if low is not None else '-inf'}, {high}{bracket}")

    @staticmethod
    def check_choice(errors: List[str], key: str, value: str, choices):
        if value not in choices:
            errors.append(f"{key}={value!r} must be one of {', '.join(choices)}")


class Stopwatch:
    """Wall-clock timer in whole milliseconds"""

    def __init__(self):
        self.started = time.perf_counter()

    def elapsed_ms(self) -> int:
        return int(round((time.perf_counter() - self.started) * 1000))


def setup_logging(level: str = None, log_file: str = None):
    """Configure the root logger once for command-line use"""
    level = (level or os.getenv('LOG_LEVEL', 'INFO')).upper()
    handlers = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
