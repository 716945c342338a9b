"""
Bench package for synthetic tasks and oracles.
Provides ground-truth tasks and the brute-force checks for gating and scoring.
"""

from .oracles import (ablation_table_oracle, finite_difference_grad, physical_ablation_oracle,
                      relative_error)
from .recovery import RecoveryScore, allocation_from_plans, rank_recovery_metric
from .smoke_corpus import smoke_corpus
from .teacher_task import gen_teacher_task, numerical_rank, planted_delta

__all__ = ['ablation_table_oracle', 'finite_difference_grad', 'physical_ablation_oracle',
           'relative_error', 'RecoveryScore', 'allocation_from_plans', 'rank_recovery_metric',
           'smoke_corpus', 'gen_teacher_task', 'numerical_rank', 'planted_delta']
