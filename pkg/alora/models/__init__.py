"""
Models package for data structures.
Contains the configuration and bookkeeping records shared by every layer.
"""

from .module_id import ModuleId, ModuleKind, N_MOD
from .config import AllocationConfig, ModelConfig, RunConfig, TaskConfig, TrainConfig
from .example import Batch, DataSplits, Example
from .importance import ImportanceTable
from .plan import AllocationPlan
from .teacher_spec import SyntheticTask, TeacherSpec

__all__ = ['ModuleId', 'ModuleKind', 'N_MOD', 'AllocationConfig', 'ModelConfig', 'RunConfig',
           'TaskConfig', 'TrainConfig', 'Batch', 'DataSplits', 'Example', 'ImportanceTable',
           'AllocationPlan', 'SyntheticTask', 'TeacherSpec']
