"""
Scoring
Validation metric, scorer registry and validation-batch sampling
"""

import hashlib
import logging
from typing import Optional, Sequence

import numpy as np

from alora.core.adapter import GateMask
from alora.core.network import SuperNetwork, forward_loss
from alora.core.tensor import no_tape
from alora.models.config import SCORERS, AllocationConfig, TrainConfig
from alora.models.example import Batch, DataSplits, Example
from alora.models.importance import ImportanceTable

logger = logging.getLogger(__name__)


def metric(net: SuperNetwork, mask: Optional[GateMask], batch: Batch) -> float:
    """S(.): negative mean cross-entropy of the masked network, no gradients recorded"""
    with no_tape():
        return -forward_loss(batch, net, mask=mask).item()


def batch_fingerprint(batch: Batch) -> str:
    digest = hashlib.sha1()
    digest.update(batch.token_ids.tobytes())
    digest.update(batch.positions.tobytes())
    digest.update(batch.labels.tobytes())
    return digest.hexdigest()[:12]


def sample_val_batch(dev: Sequence[Example], size: int, rng: np.random.Generator) -> Batch:
    """Seeded draw without replacement from the dev split"""
    if not dev:
        raise ValueError("Development split is empty")
    picks = rng.choice(len(dev), size=min(size, len(dev)), replace=False)
    return Batch([dev[i] for i in sorted(picks)])


def build_scorer(name: str, alloc: Optional[AllocationConfig] = None,
                 train: Optional[TrainConfig] = None, seed: int = 0, threads: int = 1):
    """
    Scorer object for a name in SCORERS.

    Raises:
        ValueError: for an unknown scorer name
    """
    from alora.algorithms import AblationScorer, DnasScorer, SensitivityScorer

    alloc = alloc or AllocationConfig()
    train = train or TrainConfig()
    if name == 'ablora':
        return AblationScorer(threads=threads)
    if name == 'dnas':
        return DnasScorer(alloc, train, seed=seed)
    if name == 'sensitivity':
        return SensitivityScorer()
    raise ValueError(f"Unknown scorer {name!r}; expected one of {', '.join(SCORERS)}")


def score_all(net: SuperNetwork, batch: Batch, scorer='ablora',
              data: Optional[DataSplits] = None, **kwargs) -> ImportanceTable:
    """
    One importance score per active rank.

    Args:
        net: Super-network
        batch: Validation batch
        scorer: Scorer name or scorer object
        data: Task splits (needed by the relaxation scorer)
        **kwargs: Passed to build_scorer when scorer is a name
    """
    if isinstance(scorer, str):
        scorer = build_scorer(scorer, **kwargs)
    return scorer.score_table(net, batch, data)
