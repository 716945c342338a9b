"""
Core package for the autodiff engine and the allocation workflow.
Contains the tensor tape, backbone, adapters, trainer, allocator and experiment runner.
"""

from .adapter import AloraAdapter, GateMask, active_rank_count, merge_into_base
from .allocator import AllocationResult, budget_check, run_allocation
from .experiment import ExperimentRunner, RunOutcome
from .network import BaseModel, SuperNetwork, forward_loss
from .tensor import Tape, Tensor, no_tape
from .trainer import Trainer, split_dataset

__all__ = ['AloraAdapter', 'GateMask', 'active_rank_count', 'merge_into_base',
           'AllocationResult', 'budget_check', 'run_allocation', 'ExperimentRunner', 'RunOutcome',
           'BaseModel', 'SuperNetwork', 'forward_loss', 'Tape', 'Tensor', 'no_tape',
           'Trainer', 'split_dataset']
