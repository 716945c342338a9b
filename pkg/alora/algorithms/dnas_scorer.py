"""
Relaxed-Gate Importance Scorer
Architecture weights 2*sigmoid(a') learned by alternating weight and logit steps
"""

import logging
import math
import time
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from alora.core.network import SuperNetwork, forward_loss
from alora.core.scoring import batch_fingerprint
from alora.core.tensor import Tape, Tensor
from alora.core.trainer import OptimState, optimizer_step
from alora.models.config import AllocationConfig, TrainConfig
from alora.models.example import Batch, DataSplits, Example
from alora.models.importance import ImportanceTable
from alora.models.module_id import RankRef
from alora.utils import derive_rng

logger = logging.getLogger(__name__)


def dnas_score(net: SuperNetwork, r: RankRef) -> float:
    """Relaxed architecture weight 2*sigmoid(a') of one rank, in (0, 2)"""
    module_id, index = r
    return float(2.0 * expit(net.adapters[module_id].arch_logits.data[0, index]))


def _arch_params(net: SuperNetwork) -> List[Tuple[str, Tensor]]:
    return [(f"{mid.label}.arch", net.adapters[mid].arch_logits) for mid in net.module_ids()]


def _take_step(net: SuperNetwork, batch: Batch, params, state: OptimState, lr: float) -> float:
    net.zero_grad()
    with Tape():
        loss = forward_loss(batch, net, relaxed=True)
        loss.backward()
    optimizer_step(params(), state, lr)
    return loss.item()


class DnasScorer:
    """
    Gate-relaxation scorer.

    On a copy of the network, gates are scaled by 2*sigmoid(a') and the
    training split is halved into D1 and D2. Each step updates adapter
    weights on a D1 batch and architecture logits on a D2 batch, for as
    many steps as one recovery phase. Only the learned logits are written
    back to the live network; they are the scores.
    """

    name = 'dnas'

    def __init__(self, alloc: AllocationConfig, train: TrainConfig, seed: int = 0):
        self.alloc = alloc
        self.train = train
        self.rng = derive_rng(seed, 'dnas')

    def relax(self, net: SuperNetwork, train_examples: List[Example]) -> SuperNetwork:
        """Run the alternating relaxation phase and return the trained copy"""
        if not train_examples:
            raise ValueError("Relaxation needs a non-empty training split")
        work = net.copy()
        order = self.rng.permutation(len(train_examples))
        half = max(1, len(order) // 2)
        d1 = [train_examples[i] for i in order[:half]]
        d2 = [train_examples[i] for i in order[half:]] or d1

        steps_per_epoch = math.ceil(len(train_examples) / self.train.batch_size)
        n_steps = max(1, math.ceil(self.alloc.k2_epochs * steps_per_epoch))
        weight_state = OptimState(weight_decay=self.train.weight_decay)
        arch_state = OptimState(weight_decay=0.0)

        for step in range(n_steps):
            w_batch = self._draw(d1)
            a_batch = self._draw(d2)
            w_loss = _take_step(work, w_batch, work.named_trainable, weight_state, self.train.lr_peak)
            a_loss = _take_step(work, a_batch, lambda: _arch_params(work), arch_state,
                                self.alloc.dnas_arch_lr)
            logger.debug(f"relaxation step {step + 1}/{n_steps}: weights {w_loss:.5f} arch {a_loss:.5f}")
        return work

    def _draw(self, pool: List[Example]) -> Batch:
        size = min(self.train.batch_size, len(pool))
        picks = self.rng.choice(len(pool), size=size, replace=False)
        return Batch([pool[i] for i in picks])

    def score_table(self, net: SuperNetwork, batch: Batch, data: Optional[DataSplits] = None) -> ImportanceTable:
        if data is None:
            raise ValueError("The relaxation scorer needs the task splits")
        start = time.perf_counter()
        work = self.relax(net, data.train)
        for module_id, adapter in net.adapters.items():
            adapter.arch_logits = Tensor.parameter(work.adapters[module_id].arch_logits.data,
                                                   name=adapter.arch_logits.name)
        entries = {r: dnas_score(net, r) for r in net.rank_universe()}
        moved = float(np.max(np.abs(np.array(list(entries.values())) - 1.0))) if entries else 0.0
        logger.info(f"Relaxation scores for {len(entries)} ranks in {time.perf_counter() - start:.2f}s "
                    f"(max |score - 1| = {moved:.4f})")
        return ImportanceTable(entries, batch_id=batch_fingerprint(batch), scorer=self.name)
