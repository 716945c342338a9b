"""
Rank Allocator
Score, prune the weakest ranks, regrow un-pruned modules, recover, repeat
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from alora.core.adapter import active_rank_count, grow_ranks, prune_ranks
from alora.core.network import SuperNetwork
from alora.core.scoring import build_scorer, sample_val_batch
from alora.core.trainer import Trainer, dev_loss
from alora.errors import InvariantError
from alora.models.config import AllocationConfig, TrainConfig
from alora.models.example import DataSplits
from alora.models.importance import ImportanceTable
from alora.models.module_id import ModuleId, RankRef
from alora.models.plan import AllocationPlan
from alora.utils import derive_rng

logger = logging.getLogger(__name__)


def select_prune_set(table: ImportanceTable, n: int) -> List[RankRef]:
    """
    The n lowest-scoring ranks of a table.

    Ties go to the lower module average first, then the lower layer,
    module kind and rank index.

    Raises:
        ValueError: for negative n or n above the table size
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n > len(table):
        raise ValueError(f"cannot prune {n} ranks from a table of {len(table)}")
    avg = table.module_avg

    def key(item):
        (module_id, index), score = item
        return score, avg[module_id], module_id.layer, int(module_id.kind), index

    return [ref for ref, _ in sorted(table.entries.items(), key=key)[:n]]


def distribute_growth(unpruned: Sequence[ModuleId], n: int) -> Dict[ModuleId, int]:
    """
    Spread n new ranks as evenly as possible.

    Args:
        unpruned: Modules ordered by module average, highest first
        n: Ranks to hand out

    Returns:
        module -> count; the n mod k leftover ranks go to the first modules
    """
    if not unpruned:
        raise ValueError("No modules to grow")
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    base, extra = divmod(n, len(unpruned))
    grow_map = {}
    for position, module_id in enumerate(unpruned):
        count = base + (1 if position < extra else 0)
        if count:
            grow_map[module_id] = count
    return grow_map


def budget_check(net: SuperNetwork, cfg: AllocationConfig) -> Dict:
    """
    Assert the rank budget and report the allocation.

    Raises:
        InvariantError: if active ranks exceed r_target
    """
    counts = active_rank_count(net)
    if counts.total > cfg.r_target:
        raise InvariantError(f"{counts.total} active ranks exceed the budget of {cfg.r_target}")
    return {
        'total': counts.total,
        'r_target': cfg.r_target,
        'per_module': {mid.label: count for mid, count in counts.per_module.items()},
    }


def plan_round(net: SuperNetwork, table: ImportanceTable, n: int, round_no: int) -> AllocationPlan:
    """Decide one round: prune set plus grow map over modules untouched by pruning"""
    prune_set = select_prune_set(table, n)
    pruned_modules = {mid for mid, _ in prune_set}
    avg = table.module_avg

    candidates = [mid for mid in net.module_ids()
                  if mid not in pruned_modules
                  and net.adapters[mid].active_rank_count > 0
                  and mid in avg]
    # highest average first; ties by (layer, kind)
    candidates.sort(key=lambda mid: (-avg[mid], mid.layer, int(mid.kind)))
    grow_map = distribute_growth(candidates, len(prune_set)) if candidates and prune_set else {}
    return AllocationPlan(round=round_no, prune_set=prune_set, grow_map=grow_map, table=table)


def apply_plan(net: SuperNetwork, plan: AllocationPlan, rng: np.random.Generator,
               init_std: float = 0.02) -> SuperNetwork:
    """Prune first, then grow modules in (layer, kind) order"""
    by_module: Dict[ModuleId, List[int]] = {}
    for module_id, index in plan.prune_set:
        by_module.setdefault(module_id, []).append(index)
    for module_id in sorted(by_module):
        prune_ranks(net.adapters[module_id], by_module[module_id])
    for module_id in sorted(plan.grow_map):
        grow_ranks(net.adapters[module_id], plan.grow_map[module_id], rng, init_std)
    plan.active_after = active_rank_count(net).total
    return net


def replay_plans(net: SuperNetwork, plans: Sequence[AllocationPlan], seed: int,
                 init_std: float = 0.02) -> SuperNetwork:
    """Re-apply a plan history to a fresh network with the same growth stream"""
    rng = derive_rng(seed, 'grow')
    for plan in plans:
        apply_plan(net, plan, rng, init_std)
    return net


def final_training(trainer: Trainer) -> int:
    """
    Train out the rest of the schedule, then keep the best-dev parameters.

    Returns:
        Steps taken
    """
    remaining = trainer.total_steps - trainer.global_step
    steps = trainer.train_steps(remaining) if remaining > 0 else 0
    trainer.restore_best()
    return steps


@dataclass
class AllocationResult:
    """Outcome of a full allocation run."""

    net: SuperNetwork
    plans: List[AllocationPlan]
    metrics: List[Dict]
    phase_seconds: Dict[str, float] = field(default_factory=dict)
    final_dev_loss: float = float('nan')
    stopped_early: bool = False
    allocation_halted: bool = False


def run_allocation(net: SuperNetwork, cfg: AllocationConfig, data: DataSplits, scorer='ablora',
                   train_cfg: Optional[TrainConfig] = None, seed: int = 0,
                   threads: int = 1) -> AllocationResult:
    """
    The full prune-and-reallocate workflow.

    Trains k1_epochs, then runs up to n_rounds rounds of: score on a fresh
    validation batch, prune n_per_round ranks, grow modules that lost no
    rank this round, recover for k2_epochs. Training then continues to
    max_epochs and the best-dev parameters of the final structure are kept.

    Args:
        net: Freshly initialized super-network
        cfg: Budget and schedule
        data: Task splits; validation batches come from dev
        scorer: Scorer name or object
        train_cfg: Optimizer and schedule settings
        seed: Top-level seed for the bval/grow/dnas streams
        threads: Worker threads for ablation scoring

    Returns:
        AllocationResult with the plan history and metrics log
    """
    train_cfg = train_cfg or TrainConfig(seed=seed)
    if isinstance(scorer, str):
        scorer = build_scorer(scorer, cfg, train_cfg, seed=seed, threads=threads)
    bval_rng = derive_rng(seed, 'bval')
    grow_rng = derive_rng(seed, 'grow')

    trainer = Trainer(net, data, train_cfg)
    checksum = net.frozen_checksum()
    budget_check(net, cfg)
    phases: Dict[str, float] = {}
    plans: List[AllocationPlan] = []
    halted = False

    def timed(name, fn, *args):
        start = time.perf_counter()
        result = fn(*args)
        phases[name] = phases.get(name, 0.0) + time.perf_counter() - start
        return result

    logger.info(f"Allocation start: {active_rank_count(net).total} ranks, budget {cfg.r_target}, "
                f"{trainer.total_steps} scheduled steps")
    timed('train_k1', trainer.train_epochs, cfg.k1_epochs)

    for round_no in range(1, cfg.n_rounds + 1):
        if trainer.stopped:
            break
        active = active_rank_count(net).total
        if cfg.n_per_round > active or cfg.n_per_round == 0:
            logger.info(f"Round {round_no}: cannot prune {cfg.n_per_round} of {active} ranks; "
                        f"allocation stops")
            halted = True
            break

        batch = sample_val_batch(data.dev, cfg.b_val, bval_rng)
        table = timed('scoring', scorer.score_table, net, batch, data)
        plan = plan_round(net, table, cfg.n_per_round, round_no)
        apply_plan(net, plan, grow_rng, cfg.init_std)
        report = budget_check(net, cfg)
        if plan.grow_map and report['total'] != active:
            raise InvariantError(f"round {round_no} changed the budget from {active} to {report['total']}")
        if not plan.is_consistent():
            raise InvariantError(f"round {round_no} grew a module it pruned")
        plans.append(plan)
        trainer.structure_changed()
        logger.info(f"Round {round_no}: pruned {len(plan.prune_set)}, grew {plan.grown} "
                    f"over {len(plan.grow_map)} modules, {report['total']} active")
        timed('train_k2', trainer.train_epochs, cfg.k2_epochs)

    timed('train_final', final_training, trainer)

    if net.frozen_checksum() != checksum:
        raise InvariantError("frozen backbone weights changed during allocation")
    final = timed('final_eval', dev_loss, net, data.dev)
    logger.info(f"Allocation done: {len(plans)} rounds, {active_rank_count(net).total} active ranks, "
                f"dev loss {final:.6f}")
    return AllocationResult(net=net, plans=plans, metrics=trainer.metrics, phase_seconds=phases,
                            final_dev_loss=final, stopped_early=trainer.stopped,
                            allocation_halted=halted)
