"""
Command Routes for the ALoRA lab
Defines the run, merge, report, compare and sweep commands
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from alora.core.experiment import (ALLOCATION_FILE, PLAN_HISTORY_FILE, SUMMARY_FILE,
                                   ExperimentRunner)
from alora.core.allocator import select_prune_set
from alora.core.network import SuperNetwork
from alora.core.tensor import no_tape
from alora.errors import ConfigurationError, InvariantError
from alora.models.config import SCORERS, ModelConfig, RunConfig
from alora.models.example import Batch, Example
from alora.models.module_id import ModuleKind
from alora.models.plan import AllocationPlan
from alora.utils import CheckpointCodec, CSVTables, JSONFormatter, derive_rng, resolve_thread_count

from .middleware import MissingArtifactError, exit_codes, log_phase

logger = logging.getLogger(__name__)

MERGE_TOLERANCE = 1e-6
PROBE_SIZE = 8
REPORT_FILE = 'report_allocation.csv'
COMPARE_FILE = 'compare.csv'
SWEEP_FILE = 'sweep.csv'


def load_config(config_path: str, seed: Optional[int] = None, out_dir: Optional[str] = None,
                scorer: Optional[str] = None) -> RunConfig:
    """
    Read, validate and resolve a JSON run config, then apply overrides.

    Raises:
        ConfigurationError: unreadable file, bad JSON or any invalid field
    """
    try:
        with open(config_path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {config_path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON in {config_path}: {e.msg} (line {e.lineno})")
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")

    cfg = RunConfig.from_dict(raw).with_overrides(seed=seed, out_dir=out_dir, scorer=scorer)
    logger.info(f"Resolved config: {JSONFormatter().to_json_string(cfg.to_dict())}")
    return cfg


def probe_batch(model: ModelConfig, seed: int, size: int = PROBE_SIZE) -> Batch:
    """Random full-length sequences drawn from the probe stream"""
    rng = derive_rng(seed, 'probe')
    tokens = rng.integers(0, model.vocab_size, size=(size, model.max_seq_len))
    labels = rng.integers(0, model.n_classes, size=size)
    return Batch([Example(tuple(int(t) for t in row), int(y)) for row, y in zip(tokens, labels)])


def _require(run_dir: str, name: str) -> str:
    path = os.path.join(run_dir, name)
    if not os.path.isfile(path):
        raise MissingArtifactError(f"missing artifact {path}")
    return path


@exit_codes
@log_phase('run')
def cmd_run(config_path: str, seed: Optional[int] = None, out_dir: Optional[str] = None,
            scorer: Optional[str] = None) -> int:
    """Full allocation run with every artifact written into out_dir"""
    cfg = load_config(config_path, seed=seed, out_dir=out_dir, scorer=scorer)
    outcome = ExperimentRunner(cfg, threads=resolve_thread_count()).run()
    recovery = '' if outcome.recovery is None else f"rank recovery {outcome.recovery.value:.4f}; "
    print(f"final dev loss {outcome.result.final_dev_loss:.6f}; {recovery}"
          f"{outcome.budget['total']}/{outcome.budget['r_target']} ranks active; "
          f"artifacts in {cfg.out_dir}")
    return 0


@exit_codes
@log_phase('merge')
def cmd_merge(checkpoint: str, out_path: str) -> int:
    """
    Fold every adapter into its base weight and write a dense checkpoint.

    The merged network must reproduce the adapter-form logits on a probe
    batch to within 1e-6 before anything is written.
    """
    if not os.path.isfile(checkpoint):
        raise MissingArtifactError(f"missing checkpoint {checkpoint}")
    codec = CheckpointCodec()
    tensors, metadata = codec.load(checkpoint)
    if 'model' not in metadata:
        raise ConfigurationError("checkpoint carries no model config", field_path='model')
    model = ModelConfig.from_dict(metadata['model'])
    net = SuperNetwork.from_tensors(model, tensors)
    merged = net.merged()

    batch = probe_batch(model, int(metadata.get('seed', 0)))
    with no_tape():
        gap = float(np.max(np.abs(net.logits(batch).data - merged.logits(batch).data)))
    logger.info(f"Merge probe: max |logit gap| {gap:.3e} over {len(batch.examples)} sequences")
    if not gap <= MERGE_TOLERANCE:
        raise InvariantError(f"merged model deviates from adapter form by {gap:.3e} "
                             f"(tolerance {MERGE_TOLERANCE:g})")

    codec.save(out_path, merged.to_tensors(), metadata={**metadata, 'form': 'merged'})
    print(f"merged {len(net.adapters)} adapters into {out_path} (probe gap {gap:.3e})")
    return 0


def allocation_pivot(allocation: pd.DataFrame) -> pd.DataFrame:
    """Layer x module rank table with per-layer totals and a totals row"""
    table = allocation.pivot(index='layer', columns='module', values='final_rank')
    modules = [kind.slug for kind in ModuleKind if kind.slug in table.columns]
    table = table[modules].fillna(0).astype(int)
    table['total'] = table.sum(axis=1)
    table.loc['total'] = table.sum(axis=0)
    return table


def _check_prune_set(run_dir: str, plan: AllocationPlan, tables: CSVTables):
    """The recorded prune set must be the lowest-scoring ranks of the round's exported table"""
    path = os.path.join(run_dir, plan.scores_csv) if plan.scores_csv else ''
    if not os.path.isfile(path):
        logger.warning(f"round {plan.round}: no importance table to check against")
        return
    table = tables.read_importance(path)
    if select_prune_set(table, len(plan.prune_set)) != plan.prune_set:
        raise InvariantError(f"round {plan.round} pruned ranks that are not the lowest scored "
                             f"in {plan.scores_csv}")


@exit_codes
@log_phase('report')
def cmd_report(run_dir: str, out_dir: Optional[str] = None) -> int:
    """Print the final rank table and per-round plan summary; emit the heatmap CSV"""
    tables = CSVTables()
    formatter = JSONFormatter()
    allocation = tables.read_allocation(_require(run_dir, ALLOCATION_FILE))
    plans = formatter.parse_plan_history(formatter.read_json_file(_require(run_dir, PLAN_HISTORY_FILE)))

    pivot = allocation_pivot(allocation)
    print(pivot.to_string())
    for plan in plans:
        _check_prune_set(run_dir, plan, tables)
        print(f"round {plan.round:2d}: pruned {len(plan.prune_set):3d} "
              f"from {len(plan.pruned_modules)} modules, grew {plan.grown:3d} "
              f"over {len(plan.grow_map)} modules ({plan.scores_csv})")

    summary_path = os.path.join(run_dir, SUMMARY_FILE)
    if os.path.isfile(summary_path):
        budget = formatter.read_json_file(summary_path).get('budget', {})
        total = int(pivot.loc['total', 'total'])
        if 'total' in budget and budget['total'] != total:
            raise InvariantError(f"allocation totals {total} but the run reported {budget['total']}")

    target_dir = out_dir or run_dir
    os.makedirs(target_dir, exist_ok=True)
    tables.write_report(allocation, os.path.join(target_dir, REPORT_FILE))
    return 0


def _compare_rows(cfg: RunConfig, scorers: Sequence[str], threads: int) -> List[Dict[str, Any]]:
    rows = []
    for scorer in scorers:
        for seed in cfg.seeds:
            run_cfg = cfg.with_overrides(seed=seed, scorer=scorer)
            outcome = ExperimentRunner(run_cfg, threads=threads).run(write=False)
            recovery = float('nan') if outcome.recovery is None else outcome.recovery.value
            rows.append({'scorer': scorer, 'seed': seed,
                         'final_dev_loss': outcome.result.final_dev_loss,
                         'rank_recovery': recovery})
            logger.info(f"compare {scorer} seed {seed}: dev loss {outcome.result.final_dev_loss:.6f}")
    return rows


@exit_codes
@log_phase('compare')
def cmd_compare(config_path: str, scorers: Sequence[str], out_dir: Optional[str] = None,
                seeds: Optional[Sequence[int]] = None) -> int:
    """Same task and seed matrix under each scorer; writes compare.csv"""
    scorers = list(scorers)
    if len(scorers) < 2:
        raise ConfigurationError("compare needs at least two scorers", field_path='scorers')
    unknown = [s for s in scorers if s not in SCORERS]
    if unknown:
        raise ConfigurationError(f"unknown scorers {unknown}", field_path='scorers')

    cfg = load_config(config_path, out_dir=out_dir)
    if seeds is not None:
        cfg.seeds = list(seeds)
    rows = _compare_rows(cfg, scorers, resolve_thread_count())

    os.makedirs(cfg.out_dir, exist_ok=True)
    CSVTables().write_compare(rows, os.path.join(cfg.out_dir, COMPARE_FILE))
    medians = pd.DataFrame(rows).groupby('scorer')['final_dev_loss'].median()
    print(medians.to_string())
    return 0


@exit_codes
@log_phase('sweep')
def cmd_sweep(config_path: str, budgets: Optional[Sequence[int]] = None,
              seeds: Optional[Sequence[int]] = None, out_dir: Optional[str] = None) -> int:
    """ALoRA at several uniform per-module budgets; writes sweep.csv"""
    cfg = load_config(config_path, out_dir=out_dir)
    budgets = list(budgets) if budgets is not None else cfg.budget_multipliers
    seeds = list(seeds) if seeds is not None else cfg.seeds
    if not budgets or any(m < 1 for m in budgets):
        raise ConfigurationError("budget multipliers must be positive", field_path='budget_multipliers')

    threads = resolve_thread_count()
    rows = []
    for multiplier in budgets:
        budget_cfg = cfg.with_budget(multiplier)
        if budget_cfg.alloc.n_per_round > budget_cfg.alloc.r_target:
            raise ConfigurationError(f"n_per_round exceeds the budget at multiplier {multiplier}",
                                     field_path='alloc.n_per_round')
        for seed in seeds:
            outcome = ExperimentRunner(budget_cfg.with_overrides(seed=seed), threads=threads).run(write=False)
            rows.append({'budget_multiplier': multiplier, 'seed': seed,
                         'final_dev_loss': outcome.result.final_dev_loss,
                         'active_ranks_total': outcome.budget['total']})
            logger.info(f"sweep x{multiplier} seed {seed}: dev loss {outcome.result.final_dev_loss:.6f}")

    os.makedirs(cfg.out_dir, exist_ok=True)
    CSVTables().write_sweep(rows, os.path.join(cfg.out_dir, SWEEP_FILE))
    print(pd.DataFrame(rows).groupby('budget_multiplier')['final_dev_loss'].median().to_string())
    return 0
