"""
Ablation Importance Scorer
Scores each LoRA rank by zeroing it out and by keeping it alone
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

from alora.core.adapter import GateMask
from alora.core.network import SuperNetwork
from alora.core.scoring import batch_fingerprint, metric
from alora.errors import StateError
from alora.models.example import Batch
from alora.models.importance import ImportanceTable
from alora.models.module_id import RankRef

logger = logging.getLogger(__name__)


def _require_active(net: SuperNetwork, r: RankRef):
    module_id, index = r
    adapter = net.adapters.get(module_id)
    if adapter is None or not 0 <= index < adapter.rank or adapter.gates[index] == 0:
        raise StateError(f"rank {index} of {module_id.label} is not active")


def ab_lora_score(net: SuperNetwork, r: RankRef, batch: Batch,
                  s_full: Optional[float] = None,
                  universe: Optional[List[RankRef]] = None) -> float:
    """
    Importance of one rank: S(M) - S(M without r) + S(M with only r).

    Args:
        net: Super-network (read only)
        r: (module_id, rank index) of an active rank
        batch: Validation batch
        s_full: Precomputed S(M), reused across a whole table
        universe: Precomputed list of active ranks

    Raises:
        StateError: if r is pruned
    """
    _require_active(net, r)
    universe = universe if universe is not None else net.rank_universe()
    if s_full is None:
        s_full = metric(net, GateMask.empty(), batch)
    s_without = metric(net, GateMask.zero_only([r]), batch)
    s_alone = metric(net, GateMask.keep_only([r], universe), batch)
    return s_full - s_without + s_alone


class AblationScorer:
    """
    Ablation-based importance for every active rank.

    S(M) is evaluated once per table; each rank then costs two masked
    evaluations, so a table takes 1 + 2 * active_ranks forward passes.
    Ranks are independent and may be scored on a thread pool; results
    are merged by (module_id, rank) key.
    """

    name = 'ablora'

    def __init__(self, threads: int = 1):
        self.threads = max(1, threads)

    def score_table(self, net: SuperNetwork, batch: Batch, data=None) -> ImportanceTable:
        start = time.perf_counter()
        universe = net.rank_universe()
        s_full = metric(net, GateMask.empty(), batch)

        def score_one(r: RankRef) -> Tuple[RankRef, float]:
            return r, ab_lora_score(net, r, batch, s_full=s_full, universe=universe)

        if self.threads > 1 and len(universe) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(score_one, universe))
        else:
            results = [score_one(r) for r in universe]

        entries: Dict[RankRef, float] = dict(sorted(results))
        table = ImportanceTable(entries, batch_id=batch_fingerprint(batch), scorer=self.name,
                                evaluations=1 + 2 * len(universe))
        logger.info(f"Scored {len(entries)} ranks with {table.evaluations} evaluations "
                    f"in {time.perf_counter() - start:.2f}s")
        return table
