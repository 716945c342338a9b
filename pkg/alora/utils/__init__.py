"""
Utils package initialization.
Exports codecs, formatters, validators and the seeding helpers used throughout the lab.
"""

import os
import zlib

import numpy as np

from .checkpoint import CheckpointCodec
from .csv_tables import CSVTables
from .json_formatter import JSONFormatter
from .task_io import TaskDataset
from .validators import ConfigValidator

THREADS_ENV = 'ALORA_THREADS'

# Named random streams; each component draws only from its own stream
SEED_STREAMS = ('data', 'init', 'adapters', 'batches', 'bval', 'grow', 'dnas', 'probe', 'teacher')


def stable_hash(name: str) -> int:
    """Process-independent 32-bit hash of a stream name"""
    return zlib.crc32(name.encode('utf-8'))


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """
    Generator for one named sub-stream of a top-level seed.

    Args:
        seed: Top-level run seed
        name: Stream name, e.g. "data" or "bval"

    Returns:
        numpy Generator seeded from SeedSequence((seed, hash(name)))
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, stable_hash(name)]))


def resolve_thread_count(default: int = 1) -> int:
    """Scorer worker threads from ALORA_THREADS, at least 1"""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


__all__ = [
    'CheckpointCodec',
    'CSVTables',
    'JSONFormatter',
    'TaskDataset',
    'ConfigValidator',
    'SEED_STREAMS',
    'stable_hash',
    'derive_rng',
    'resolve_thread_count',
]
