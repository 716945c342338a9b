"""
Allocation Plan Model
One prune-and-grow round of the allocation loop
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from alora.models.importance import ImportanceTable
from alora.models.module_id import ModuleId, RankRef


@dataclass
class AllocationPlan:
    """
    Outcome of one allocation round.

    Attributes:
        round: 1-based round number
        prune_set: Ranks whose gates were closed, in selection order
        grow_map: module -> number of ranks appended (empty when growth was skipped)
        table: Importance table the round was decided on
        scores_csv: File name of the exported importance table
        active_after: Total active ranks once the round was applied
    """

    round: int
    prune_set: List[RankRef] = field(default_factory=list)
    grow_map: Dict[ModuleId, int] = field(default_factory=dict)
    table: Optional[ImportanceTable] = field(default=None, repr=False)
    scores_csv: str = ''
    active_after: int = 0

    @property
    def pruned_modules(self) -> List[ModuleId]:
        return sorted({mid for mid, _ in self.prune_set})

    @property
    def grown(self) -> int:
        return sum(self.grow_map.values())

    def is_consistent(self) -> bool:
        """Growth matches pruning and never targets a module pruned this round"""
        if self.grow_map and self.grown != len(self.prune_set):
            return False
        return not set(self.grow_map) & set(self.pruned_modules)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'round': self.round,
            'prune_set': [[mid.layer, mid.kind.slug, index] for mid, index in self.prune_set],
            'grow_map': [[mid.layer, mid.kind.slug, count] for mid, count in sorted(self.grow_map.items())],
            'scores_csv': self.scores_csv,
            'active_after': self.active_after,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AllocationPlan':
        return cls(
            round=int(data['round']),
            prune_set=[(ModuleId.from_list(item[:2]), int(item[2])) for item in data['prune_set']],
            grow_map={ModuleId.from_list(item[:2]): int(item[2]) for item in data['grow_map']},
            scores_csv=data.get('scores_csv', ''),
            active_after=int(data.get('active_after', 0)),
        )
