import json
import logging
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from alora.models.plan import AllocationPlan

logger = logging.getLogger(__name__)


def _default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


class JSONFormatter:
    """Format run artifacts to their JSON and JSON-lines layouts"""

    def format_plan_history(self, plans: List[AllocationPlan]) -> List[Dict]:
        """Plan history: one entry per round with prune set, grow map and score CSV name"""
        return [plan.to_dict() for plan in plans]

    def parse_plan_history(self, data: List[Dict]) -> List[AllocationPlan]:
        return [AllocationPlan.from_dict(entry) for entry in data]

    def format_run_summary(self, final_dev_loss: float, phase_seconds: Dict[str, float],
                           budget: Dict[str, Any], rounds: int, scorer: str,
                           recovery: Optional[Tuple[float, bool]] = None) -> Dict:
        """Run summary; rank recovery is null when the task has no planted ranks"""
        return {
            'rank_recovery': None if recovery is None else float(recovery[0]),
            'rank_recovery_degenerate': None if recovery is None else bool(recovery[1]),
            'final_dev_loss': float(final_dev_loss),
            'rounds_completed': rounds,
            'scorer': scorer,
            'budget': budget,
            'phase_seconds': {k: round(float(v), 4) for k, v in phase_seconds.items()},
            'total_seconds': round(float(sum(phase_seconds.values())), 4),
        }

    def to_json_file(self, data: Any, filepath: str):
        """Write data to JSON file"""
        with open(filepath, 'w') as f:
            json.dump(data, f, indent=2, sort_keys=True, default=_default)
            f.write('\n')

    def to_json_string(self, data: Any) -> str:
        """Convert data to JSON string"""
        return json.dumps(data, indent=2, sort_keys=True, default=_default)

    def read_json_file(self, filepath: str) -> Any:
        with open(filepath) as f:
            return json.load(f)

    def to_jsonl_file(self, records: Iterable[Dict], filepath: str):
        """One compact JSON object per line"""
        with open(filepath, 'w') as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True, default=_default))
                f.write('\n')

    def read_jsonl_file(self, filepath: str) -> List[Dict]:
        with open(filepath) as f:
            return [json.loads(line) for line in f if line.strip()]
