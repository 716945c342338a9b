"""
Experiment Runner
Builds a task and a super-network from a run config, runs allocation and writes artifacts
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from alora.bench.recovery import RecoveryScore, rank_recovery_metric
from alora.core.adapter import active_rank_count
from alora.core.allocator import AllocationResult, budget_check, run_allocation
from alora.core.network import BaseModel, SuperNetwork
from alora.core.trainer import split_dataset
from alora.errors import ConfigurationError
from alora.models.config import RunConfig
from alora.models.example import DataSplits, Example
from alora.models.teacher_spec import TeacherSpec
from alora.utils import CheckpointCodec, CSVTables, JSONFormatter, TaskDataset, derive_rng

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'checkpoint.alora'
PLAN_HISTORY_FILE = 'plan_history.json'
METRICS_FILE = 'metrics.jsonl'
ALLOCATION_FILE = 'allocation.csv'
RESOLVED_CONFIG_FILE = 'resolved_config.json'
SUMMARY_FILE = 'run_summary.json'
RUN_ARTIFACTS = (CHECKPOINT_FILE, PLAN_HISTORY_FILE, METRICS_FILE, ALLOCATION_FILE,
                 RESOLVED_CONFIG_FILE, SUMMARY_FILE)


def importance_file(round_no: int) -> str:
    return f"importance_round_{round_no:02d}.csv"


@dataclass
class RunOutcome:
    """What one run produced."""

    result: AllocationResult
    splits: DataSplits
    spec: Optional[TeacherSpec] = None
    budget: Dict[str, Any] = field(default_factory=dict)
    recovery: Optional[RecoveryScore] = None
    artifacts: List[str] = field(default_factory=list)


class ExperimentRunner:
    """
    Orchestrates one run: task, network, allocation and artifacts.

    Every random draw comes from a named stream of the config's seed.
    """

    def __init__(self, cfg: RunConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = threads
        self.csv = CSVTables()
        self.json = JSONFormatter()
        self.codec = CheckpointCodec()

    def load_task(self) -> Tuple[BaseModel, List[Example], Optional[TeacherSpec]]:
        """
        Examples plus the base model the student starts from.

        Teacher tasks hand over their own base; file tasks with a teacher
        sidecar regenerate it; other tasks get a random base.
        """
        from alora.bench import gen_teacher_task, smoke_corpus

        task = self.cfg.task
        model = self.cfg.model
        if task.kind == 'teacher':
            spec = TeacherSpec.from_task_config(task, model, self.cfg.seed)
            base, synthetic = gen_teacher_task(spec)
            return base, synthetic.examples, spec
        if task.kind == 'smoke':
            examples = smoke_corpus(task.n_examples, model.max_seq_len, model.vocab_size,
                                    seed=self.cfg.seed)
            return BaseModel.random(model, derive_rng(self.cfg.seed, 'init')), examples, None

        try:
            examples, sidecar = TaskDataset().load(task.path)
        except OSError as e:
            raise ConfigurationError(f"cannot read task file: {e.strerror}", field_path='task.path')
        except ValueError as e:
            raise ConfigurationError(str(e), field_path='task.path')
        if sidecar and 'true_ranks' in sidecar:
            spec = TeacherSpec.from_dict(sidecar)
            base, _ = gen_teacher_task(spec)
            return base, examples, spec
        return BaseModel.random(model, derive_rng(self.cfg.seed, 'init')), examples, None

    def build(self) -> Tuple[SuperNetwork, DataSplits, Optional[TeacherSpec]]:
        base, examples, spec = self.load_task()
        splits = split_dataset(examples, self.cfg.seed)
        net = base.student(self.cfg.alloc.r_init, derive_rng(self.cfg.seed, 'adapters'),
                           self.cfg.alloc.init_std)
        logger.info(f"Built task with splits {splits.sizes()} and "
                    f"{active_rank_count(net).total} initial ranks")
        return net, splits, spec

    def run(self, write: bool = True) -> RunOutcome:
        start = time.perf_counter()
        net, splits, spec = self.build()
        setup_seconds = time.perf_counter() - start

        result = run_allocation(net, self.cfg.alloc, splits, scorer=self.cfg.scorer,
                                train_cfg=self.cfg.train, seed=self.cfg.seed, threads=self.threads)
        result.phase_seconds = {'setup': setup_seconds, **result.phase_seconds}
        outcome = RunOutcome(result=result, splits=splits, spec=spec,
                             budget=budget_check(result.net, self.cfg.alloc))
        if spec is not None:
            outcome.recovery = rank_recovery_metric(result.plans, spec, self.cfg.alloc.r_init)
            logger.info(f"Rank recovery {outcome.recovery.value:.4f}"
                        f"{' (degenerate)' if outcome.recovery.degenerate else ''}")
        if write:
            outcome.artifacts = self.write_artifacts(outcome)
        return outcome

    def write_artifacts(self, outcome: RunOutcome) -> List[str]:
        """Checkpoint, plan history, importance tables, metrics, allocation, config, summary"""
        out_dir = self.cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        result = outcome.result
        written = []

        def path(name: str) -> str:
            written.append(name)
            return os.path.join(out_dir, name)

        for plan in result.plans:
            plan.scores_csv = importance_file(plan.round)
            self.csv.write_importance(plan.table, path(plan.scores_csv))

        self.codec.save(path(CHECKPOINT_FILE), result.net.to_tensors(),
                        metadata={'model': self.cfg.model.to_dict(), 'seed': self.cfg.seed,
                                  'form': 'adapter'})
        self.json.to_json_file(self.json.format_plan_history(result.plans), path(PLAN_HISTORY_FILE))
        self.json.to_jsonl_file(result.metrics, path(METRICS_FILE))
        self.csv.write_allocation(active_rank_count(result.net).per_module, path(ALLOCATION_FILE))
        self.json.to_json_file(self.cfg.to_dict(), path(RESOLVED_CONFIG_FILE))
        self.json.to_json_file(
            self.json.format_run_summary(result.final_dev_loss, result.phase_seconds, outcome.budget,
                                         rounds=len(result.plans), scorer=self.cfg.scorer,
                                         recovery=outcome.recovery),
            path(SUMMARY_FILE))
        logger.info(f"Wrote {len(written)} artifacts to {out_dir}")
        return written
