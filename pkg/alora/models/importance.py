"""
Importance Table Model
Per-rank importance scores with per-module averages
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from alora.models.module_id import ModuleId, ModuleKind, RankRef


@dataclass
class ImportanceTable:
    """
    Scores of every active rank from one scoring pass.

    Attributes:
        entries: (module_id, rank index) -> score
        batch_id: Identifier of the validation batch that produced the scores
        scorer: Name of the scorer
        evaluations: Number of forward evaluations spent
    """

    entries: Dict[RankRef, float] = field(default_factory=dict)
    batch_id: str = ''
    scorer: str = 'ablora'
    evaluations: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ref: RankRef) -> bool:
        return ref in self.entries

    def __getitem__(self, ref: RankRef) -> float:
        return self.entries[ref]

    @property
    def module_avg(self) -> Dict[ModuleId, float]:
        """Mean score over each module's scored ranks"""
        grouped: Dict[ModuleId, List[float]] = {}
        for (module_id, _), score in sorted(self.entries.items()):
            grouped.setdefault(module_id, []).append(score)
        return {mid: float(np.mean(scores)) for mid, scores in grouped.items()}

    def modules(self) -> List[ModuleId]:
        return sorted({mid for mid, _ in self.entries})

    def to_records(self) -> List[Dict[str, Any]]:
        """Rows ordered by (layer, module, rank_index)"""
        avg = self.module_avg
        return [{'layer': mid.layer, 'module': mid.kind.slug, 'rank_index': index,
                 'score': float(score), 'module_avg': avg[mid]}
                for (mid, index), score in sorted(self.entries.items())]

    @classmethod
    def from_records(cls, records: List[Dict[str, Any]], batch_id: str = '',
                     scorer: str = 'ablora') -> 'ImportanceTable':
        entries = {(ModuleId(int(r['layer']), ModuleKind.from_slug(str(r['module']))),
                    int(r['rank_index'])): float(r['score']) for r in records}
        return cls(entries, batch_id=batch_id, scorer=scorer)

    def to_dict(self) -> Dict[str, Any]:
        return {'batch_id': self.batch_id, 'scorer': self.scorer,
                'evaluations': self.evaluations, 'entries': self.to_records()}
