"""
Rank Recovery
How well a final allocation tracks the planted teacher ranks
"""

import logging
from typing import Dict, List, NamedTuple, Sequence

import numpy as np
from scipy.stats import spearmanr

from alora.models.module_id import ModuleId
from alora.models.plan import AllocationPlan
from alora.models.teacher_spec import TeacherSpec

logger = logging.getLogger(__name__)


class RecoveryScore(NamedTuple):
    """Spearman correlation mapped to [0, 1]; degenerate when either side is constant."""

    value: float
    degenerate: bool


def allocation_from_plans(plans: Sequence[AllocationPlan], module_ids: List[ModuleId],
                          r_init: int) -> Dict[ModuleId, int]:
    """Replay prune and grow counts from r_init on every module"""
    counts = {mid: r_init for mid in module_ids}
    for plan in plans:
        for module_id, _ in plan.prune_set:
            counts[module_id] -= 1
        for module_id, grown in plan.grow_map.items():
            counts[module_id] += grown
    return counts


def recovery_from_allocation(allocation: Dict[ModuleId, int], spec: TeacherSpec) -> RecoveryScore:
    module_ids = sorted(allocation)
    final = np.array([allocation[mid] for mid in module_ids], dtype=np.float64)
    truth = spec.rank_vector(module_ids)
    if np.ptp(final) == 0 or np.ptp(truth) == 0:
        return RecoveryScore(0.5, True)
    rho = spearmanr(final, truth).correlation
    return RecoveryScore(float((rho + 1.0) / 2.0), False)


def rank_recovery_metric(plans: Sequence[AllocationPlan], spec: TeacherSpec,
                         r_init: int) -> RecoveryScore:
    """
    Spearman correlation between final per-module ranks and planted ranks, as (rho + 1) / 2.

    Args:
        plans: Plan history of a completed run
        spec: Teacher spec holding the planted ranks
        r_init: Initial rank of every module
    """
    module_ids = sorted(spec.true_ranks)
    allocation = allocation_from_plans(plans, module_ids, r_init)
    score = recovery_from_allocation(allocation, spec)
    logger.info(f"Rank recovery {score.value:.3f}{' (degenerate)' if score.degenerate else ''}")
    return score
