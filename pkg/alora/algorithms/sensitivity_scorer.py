"""
Sensitivity Importance Scorer
First-order estimate |theta * dL/dtheta| summed over each rank's parameters
"""

import logging

import numpy as np

from alora.core.network import SuperNetwork, forward_loss
from alora.core.scoring import batch_fingerprint
from alora.core.tensor import Tape
from alora.models.example import Batch
from alora.models.importance import ImportanceTable
from alora.models.module_id import RankRef

logger = logging.getLogger(__name__)


def rank_sensitivity(adapter, index: int) -> float:
    """Sum of |theta * grad| over column index of W_A and row index of W_B"""
    a_col = adapter.W_A.data[:, index] * adapter.W_A.grad[:, index]
    b_row = adapter.W_B.data[index, :] * adapter.W_B.grad[index, :]
    return float(np.abs(a_col).sum() + np.abs(b_row).sum())


def sensitivity_score(net: SuperNetwork, r: RankRef, batch: Batch) -> float:
    """Sensitivity of a single rank; one backward pass on a private copy"""
    work = net.copy()
    _backward(work, batch)
    module_id, index = r
    return rank_sensitivity(work.adapters[module_id], index)


def _backward(work: SuperNetwork, batch: Batch):
    work.zero_grad()
    with Tape():
        loss = forward_loss(batch, work)
        loss.backward()


class SensitivityScorer:
    """
    Scores every active rank from a single backward pass.

    The pass runs on a copy of the network, so neither weights nor
    gradients of the live network are touched. No smoothing across rounds.
    """

    name = 'sensitivity'

    def score_table(self, net: SuperNetwork, batch: Batch, data=None) -> ImportanceTable:
        work = net.copy()
        _backward(work, batch)
        entries = {}
        for module_id, index in net.rank_universe():
            entries[(module_id, index)] = rank_sensitivity(work.adapters[module_id], index)
        logger.info(f"Sensitivity scores for {len(entries)} ranks")
        return ImportanceTable(entries, batch_id=batch_fingerprint(batch), scorer=self.name,
                               evaluations=1)
