"""
Task Files
JSON-lines example files with a sidecar spec
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

from alora.models.example import Example

logger = logging.getLogger(__name__)


class TaskDataset:
    """
    Reader and writer for task files.

    Each line of the task file is {"tokens": [int, ...], "label": int}. The
    sidecar "<task file>.spec.json" records how the task was made (a teacher
    spec, or a description of a bundled corpus).
    """

    REQUIRED_KEYS = ('tokens', 'label')

    @staticmethod
    def sidecar_path(path: str) -> str:
        return f"{path}.spec.json"

    def save(self, path: str, examples: List[Example], spec: Optional[Dict[str, Any]] = None):
        with open(path, 'w') as f:
            for ex in examples:
                f.write(json.dumps(ex.to_dict()))
                f.write('\n')
        if spec is not None:
            with open(self.sidecar_path(path), 'w') as f:
                json.dump(spec, f, indent=2, sort_keys=True)
        logger.info(f"Wrote {len(examples)} examples to {path}")

    def load(self, path: str) -> Tuple[List[Example], Optional[Dict[str, Any]]]:
        """
        Read a task file and its sidecar spec, if present.

        Raises:
            ValueError: for a malformed line, naming its line number
        """
        examples = []
        with open(path) as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValueError(f"{path}:{line_no}: invalid JSON ({e.msg})") from None
                missing = [k for k in self.REQUIRED_KEYS if k not in record]
                if missing:
                    raise ValueError(f"{path}:{line_no}: missing keys {missing}")
                if not record['tokens']:
                    raise ValueError(f"{path}:{line_no}: empty token list")
                examples.append(Example.from_dict(record))

        spec = None
        sidecar = self.sidecar_path(path)
        if os.path.exists(sidecar):
            with open(sidecar) as f:
                spec = json.load(f)
        return examples, spec
