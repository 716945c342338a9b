"""
Example Model
Token sequences with class labels, packed batches and dataset splits
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

# additive attention bias between tokens of different sequences
CROSS_SEQUENCE_BIAS = -1e9


@dataclass(frozen=True)
class Example:
    """
    One classification example.

    Attributes:
        tokens: Token ids of the sequence
        label: Class index
    """

    tokens: Tuple[int, ...]
    label: int

    @property
    def length(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> Dict[str, Any]:
        return {'tokens': [int(t) for t in self.tokens], 'label': int(self.label)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Example':
        return cls(tuple(int(t) for t in data['tokens']), int(data['label']))


@dataclass
class Batch:
    """
    A packed batch: every sequence is laid end to end in one token matrix.

    Attention is kept inside each sequence by a block-diagonal additive
    bias, and mean pooling is a (batch × tokens) averaging matrix.
    """

    examples: List[Example]
    token_ids: np.ndarray = field(init=False, repr=False)
    positions: np.ndarray = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)
    attention_bias: np.ndarray = field(init=False, repr=False)
    pooling: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.examples:
            raise ValueError("A batch needs at least one example")
        lengths = [ex.length for ex in self.examples]
        if min(lengths) < 1:
            raise ValueError("Empty token sequence in batch")

        total = sum(lengths)
        self.token_ids = np.concatenate([np.asarray(ex.tokens, dtype=np.int64) for ex in self.examples])
        self.positions = np.concatenate([np.arange(n, dtype=np.int64) for n in lengths])
        self.labels = np.asarray([ex.label for ex in self.examples], dtype=np.int64)

        self.attention_bias = np.full((total, total), CROSS_SEQUENCE_BIAS)
        self.pooling = np.zeros((len(lengths), total))
        start = 0
        for row, n in enumerate(lengths):
            self.attention_bias[start:start + n, start:start + n] = 0.0
            self.pooling[row, start:start + n] = 1.0 / n
            start += n

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def max_length(self) -> int:
        return max(ex.length for ex in self.examples)

    @classmethod
    def chunks(cls, examples: Sequence[Example], size: int) -> List['Batch']:
        """Split examples into consecutive batches of at most size"""
        return [cls(list(examples[i:i + size])) for i in range(0, len(examples), size)]


@dataclass
class DataSplits:
    """Disjoint train/dev/test partitions of one task."""

    train: List[Example]
    dev: List[Example]
    test: List[Example]

    def sizes(self) -> Dict[str, int]:
        return {'train': len(self.train), 'dev': len(self.dev), 'test': len(self.test)}
