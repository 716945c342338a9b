"""
Module Identity
Names the seven adapter attachment points of a transformer block
"""

from enum import IntEnum
from typing import NamedTuple, Tuple


class ModuleKind(IntEnum):
    """
    Adapter attachment points of one LlaMA-style block.

    The integer value fixes the canonical ordering used by every
    tie-break and every exported table.
    """

    QUERY = 0
    KEY = 1
    VALUE = 2
    OUTPUT = 3
    GATE = 4
    UP = 5
    DOWN = 6

    @property
    def slug(self) -> str:
        """Lower-case name used in tensor names and CSV files"""
        return self.name.lower()

    @property
    def is_attention(self) -> bool:
        return self <= ModuleKind.OUTPUT

    @classmethod
    def from_slug(cls, slug: str) -> 'ModuleKind':
        try:
            return cls[slug.upper()]
        except KeyError:
            raise ValueError(f"Unknown module kind: {slug!r}") from None


N_MOD = len(ModuleKind)

ATTENTION_KINDS = tuple(k for k in ModuleKind if k.is_attention)
FFN_KINDS = tuple(k for k in ModuleKind if not k.is_attention)


class ModuleId(NamedTuple):
    """Position of one adapter: (layer index, module kind)."""

    layer: int
    kind: ModuleKind

    @property
    def label(self) -> str:
        return f"{self.layer}.{self.kind.slug}"

    def to_list(self) -> list:
        return [self.layer, self.kind.slug]

    @classmethod
    def from_list(cls, data) -> 'ModuleId':
        return cls(int(data[0]), ModuleKind.from_slug(str(data[1])))


# (module_id, rank index) addresses one LoRA rank
RankRef = Tuple[ModuleId, int]
