"""
Run Configuration
Typed records for model, training, allocation and task settings
"""

import copy
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from alora.errors import ConfigurationError
from alora.models.module_id import N_MOD

SCORERS = ('ablora', 'dnas', 'sensitivity')
TASK_KINDS = ('teacher', 'file', 'smoke')


@dataclass
class ModelConfig:
    """
    Shape of the miniature transformer.

    Attributes:
        n_layers: Number of transformer blocks
        d: Model width
        d_ff: Hidden width of the gated feed-forward network (d' > d)
        n_heads: Attention heads; must divide d
        vocab_size: Token vocabulary size
        max_seq_len: Longest accepted sequence
        n_classes: Output classes of the classification head
    """

    n_layers: int = 2
    d: int = 32
    d_ff: int = 86
    n_heads: int = 4
    vocab_size: int = 128
    max_seq_len: int = 16
    n_classes: int = 2

    @property
    def n_modules(self) -> int:
        """Adapter attachment points in the whole network"""
        return self.n_layers * N_MOD

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        return cls(**data)


@dataclass
class TrainConfig:
    """AdamW and schedule settings for every training phase."""

    lr_peak: float = 5e-3
    warmup_frac: float = 0.06
    batch_size: int = 16
    max_epochs: float = 4.0
    eval_every_steps: int = 50
    patience: int = 10
    weight_decay: float = 0.01
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        return cls(**data)


@dataclass
class AllocationConfig:
    """
    Budget and schedule of the prune-and-grow loop.

    Attributes:
        r_target: Global rank budget
        r_init: Initial rank of every module (r_target / n_modules)
        n_per_round: Ranks pruned (and regrown) per round
        n_rounds: Maximum number of allocation rounds
        k1_epochs: Warm-up training before the first round
        k2_epochs: Recovery training after each round
        b_val: Size of the validation batch used for scoring
        init_std: Standard deviation of new W_A columns
        dnas_arch_lr: Step size for architecture logits in the relaxation scorer
    """

    r_target: int = 112
    r_init: int = 8
    n_per_round: int = 14
    n_rounds: int = 8
    k1_epochs: float = 1.0
    k2_epochs: float = 0.25
    b_val: int = 32
    init_std: float = 0.02
    dnas_arch_lr: float = 1e-2

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AllocationConfig':
        return cls(**data)

    @classmethod
    def for_model(cls, model: ModelConfig, ranks_per_module: int = 8, **overrides) -> 'AllocationConfig':
        """Default budget of ranks_per_module ranks on every attachment point"""
        values = dict(r_target=ranks_per_module * model.n_modules,
                      r_init=ranks_per_module,
                      n_per_round=model.n_modules)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def defaults_for(cls, model: ModelConfig, section: Dict[str, Any]) -> Dict[str, Any]:
        """
        Default values for a partial alloc section.

        r_init follows r_target when only the budget is given, and the
        budget follows r_init when only the initial rank is given.
        """
        ranks_per_module = 8
        if isinstance(section.get('r_init'), int):
            ranks_per_module = section['r_init']
        elif isinstance(section.get('r_target'), int):
            ranks_per_module = max(1, section['r_target'] // model.n_modules)
        return cls.for_model(model, ranks_per_module=ranks_per_module).to_dict()


@dataclass
class TaskConfig:
    """
    Where training examples come from.

    kind 'teacher' generates a planted-rank synthetic task, 'file' reads a
    JSON-lines task file, 'smoke' uses the bundled sentiment corpus.
    """

    kind: str = 'teacher'
    path: Optional[str] = None
    true_ranks: Dict[str, int] = field(default_factory=lambda: {'query': 6})
    default_rank: int = 1
    n_examples: int = 1200
    noise: float = 0.0
    seq_len: int = 8
    delta_scale: float = 1.0
    seed: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TaskConfig':
        data = dict(data)
        if 'true_ranks' in data:
            data['true_ranks'] = {str(k): int(v) for k, v in data['true_ranks'].items()}
        return cls(**data)


@dataclass
class RunConfig:
    """Everything one CLI run needs, with defaults already resolved."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    alloc: AllocationConfig = field(default_factory=AllocationConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    scorer: str = 'ablora'
    out_dir: str = 'runs/default'
    seed: int = 0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    budget_multipliers: List[int] = field(default_factory=lambda: [1, 2, 4, 8])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'alloc': self.alloc.to_dict(),
            'task': self.task.to_dict(),
            'scorer': self.scorer,
            'out_dir': self.out_dir,
            'seed': self.seed,
            'seeds': list(self.seeds),
            'budget_multipliers': list(self.budget_multipliers),
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'RunConfig':
        """
        Validate a raw config mapping and build the resolved config.

        Raises:
            ConfigurationError: naming the first offending field path
        """
        from alora.utils.validators import ConfigValidator

        is_valid, errors = ConfigValidator().validate(raw)
        if not is_valid:
            path, message = errors[0]
            raise ConfigurationError(message, field_path=path)
        return cls.resolve(raw)

    @classmethod
    def resolve(cls, raw: Dict[str, Any]) -> 'RunConfig':
        """Fill defaults for every field absent from raw"""
        raw = copy.deepcopy(raw)
        model = ModelConfig.from_dict(raw.get('model', {}))

        alloc_raw = raw.get('alloc', {})
        alloc = AllocationConfig(**{**AllocationConfig.defaults_for(model, alloc_raw), **alloc_raw})

        seed = int(raw.get('seed', 0))
        train_raw = dict(raw.get('train', {}))
        train_raw.setdefault('seed', seed)

        return cls(
            model=model,
            train=TrainConfig.from_dict(train_raw),
            alloc=alloc,
            task=TaskConfig.from_dict(raw.get('task', {})),
            scorer=raw.get('scorer', 'ablora'),
            out_dir=raw.get('out_dir', 'runs/default'),
            seed=seed,
            seeds=[int(s) for s in raw.get('seeds', [0, 1, 2, 3, 4])],
            budget_multipliers=[int(m) for m in raw.get('budget_multipliers', [1, 2, 4, 8])],
        )

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None,
                       scorer: Optional[str] = None) -> 'RunConfig':
        """Apply command-line overrides, returning a new config"""
        updated = copy.deepcopy(self)
        if seed is not None:
            updated.seed = seed
            updated.train.seed = seed
        if out_dir is not None:
            updated.out_dir = out_dir
        if scorer is not None:
            if scorer not in SCORERS:
                raise ConfigurationError(f"unknown scorer {scorer!r}", field_path='scorer')
            updated.scorer = scorer
        return updated

    def with_budget(self, ranks_per_module: int) -> 'RunConfig':
        """Same run at a different uniform initial rank"""
        updated = copy.deepcopy(self)
        updated.alloc.r_init = ranks_per_module
        updated.alloc.r_target = ranks_per_module * self.model.n_modules
        return updated
