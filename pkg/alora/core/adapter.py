"""
Gated Low-Rank Adapter
LoRA delta x·W_A·diag(gates)·W_B with rank pruning, growth and merging
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, NamedTuple, Optional

import numpy as np

from alora.core.tensor import Tensor, concat_cols, concat_rows, matmul, mul, scale, sigmoid
from alora.errors import DimensionError, RankIndexError, StateError
from alora.models.module_id import ModuleId, RankRef

logger = logging.getLogger(__name__)

DEFAULT_INIT_STD = 0.02


@dataclass
class AloraAdapter:
    """
    One gated adapter at a (layer, module) attachment point.

    Attributes:
        module_id: Attachment point
        W_A: d_in×r down-projection (trainable)
        W_B: r×d_out up-projection (trainable, zero at creation)
        gates: length-r binary gate vector
        arch_logits: 1×r relaxation logits, only trained by the DNAS scorer
        merged: set once the delta has been folded into a base weight
    """

    module_id: ModuleId
    W_A: Tensor
    W_B: Tensor
    gates: np.ndarray
    arch_logits: Tensor
    merged: bool = False

    @classmethod
    def create(cls, module_id: ModuleId, d_in: int, d_out: int, rank: int,
               rng: np.random.Generator, init_std: float = DEFAULT_INIT_STD) -> 'AloraAdapter':
        """W_A ~ N(0, init_std^2), W_B = 0, all gates open, arch logits 0"""
        if rank < 0:
            raise ValueError(f"rank must be non-negative, got {rank}")
        prefix = f"adapter.{module_id.label}"
        return cls(
            module_id=module_id,
            W_A=Tensor.parameter(rng.normal(0.0, init_std, size=(d_in, rank)), name=f"{prefix}.A"),
            W_B=Tensor.parameter(np.zeros((rank, d_out)), name=f"{prefix}.B"),
            gates=np.ones(rank),
            arch_logits=Tensor.parameter(np.zeros((1, rank)), name=f"{prefix}.arch"),
        )

    @property
    def rank(self) -> int:
        """Physical rank, pruned columns included"""
        return self.W_A.shape[1]

    @property
    def d_in(self) -> int:
        return self.W_A.shape[0]

    @property
    def d_out(self) -> int:
        return self.W_B.shape[1]

    @property
    def active_rank_count(self) -> int:
        return int(np.count_nonzero(self.gates))

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.gates)

    def rank_refs(self):
        """RankRefs of every active rank, in index order"""
        return [(self.module_id, int(i)) for i in self.active_indices()]

    def delta_matrix(self) -> np.ndarray:
        """Dense d_in×d_out delta W_A·diag(gates)·W_B"""
        return (self.W_A.data * self.gates) @ self.W_B.data

    def copy(self) -> 'AloraAdapter':
        return AloraAdapter(
            module_id=self.module_id,
            W_A=Tensor.parameter(self.W_A.data, name=self.W_A.name),
            W_B=Tensor.parameter(self.W_B.data, name=self.W_B.name),
            gates=self.gates.copy(),
            arch_logits=Tensor.parameter(self.arch_logits.data, name=self.arch_logits.name),
            merged=self.merged,
        )

    def compacted(self) -> 'AloraAdapter':
        """New adapter holding only the active ranks, columns physically removed"""
        keep = self.active_indices()
        return AloraAdapter(
            module_id=self.module_id,
            W_A=Tensor.parameter(self.W_A.data[:, keep], name=self.W_A.name),
            W_B=Tensor.parameter(self.W_B.data[keep, :], name=self.W_B.name),
            gates=np.ones(len(keep)),
            arch_logits=Tensor.parameter(self.arch_logits.data[:, keep], name=self.arch_logits.name),
            merged=self.merged,
        )


@dataclass(frozen=True)
class GateMask:
    """
    Temporary ablation of ranks, applied on top of the adapters' own gates.

    A mask lists the ranks it zeroes; every other rank is kept. Masks never
    mutate adapter state, so scorers can evaluate them concurrently.
    """

    zeroed: FrozenSet[RankRef] = field(default_factory=frozenset)

    @classmethod
    def empty(cls) -> 'GateMask':
        return cls()

    @classmethod
    def zero_only(cls, refs: Iterable[RankRef]) -> 'GateMask':
        return cls(frozenset(refs))

    @classmethod
    def keep_only(cls, refs: Iterable[RankRef], universe: Iterable[RankRef]) -> 'GateMask':
        """Zero every rank of universe except refs"""
        keep = set(refs)
        return cls(frozenset(r for r in universe if r not in keep))

    def compose(self, other: 'GateMask') -> 'GateMask':
        """Mask zeroing what either mask zeroes"""
        return GateMask(self.zeroed | other.zeroed)

    def complement(self, universe: Iterable[RankRef]) -> 'GateMask':
        """Mask keeping exactly what this mask zeroes within universe"""
        return GateMask(frozenset(r for r in universe if r not in self.zeroed))

    def factors(self, adapter: AloraAdapter) -> np.ndarray:
        """
        Per-rank multipliers this mask applies to an adapter.

        Raises:
            RankIndexError: if the mask names a rank index ≥ adapter.rank
        """
        out = np.ones(adapter.rank)
        for module_id, index in self.zeroed:
            if module_id != adapter.module_id:
                continue
            if not 0 <= index < adapter.rank:
                raise RankIndexError(
                    f"mask names rank {index} of {module_id.label}, which has rank {adapter.rank}")
            out[index] = 0.0
        return out

    def effective_gates(self, adapter: AloraAdapter) -> np.ndarray:
        return adapter.gates * self.factors(adapter)

    def __len__(self) -> int:
        return len(self.zeroed)


def adapter_delta(x: Tensor, a: AloraAdapter, mask: Optional[GateMask] = None,
                  relaxed: bool = False) -> Tensor:
    """
    Adapter output (x·W_A)·diag(g)·W_B without forming the dense product.

    Args:
        x: l×d_in input
        a: Adapter
        mask: Optional temporary ablation
        relaxed: Scale each rank by 2·sigmoid(arch_logit) on top of its gate

    Returns:
        l×d_out tensor
    """
    if x.shape[1] != a.d_in:
        raise DimensionError(f"adapter {a.module_id.label}: input {x.shape} does not match d_in = {a.d_in}")
    gates = a.gates if mask is None else mask.effective_gates(a)
    low = matmul(x, a.W_A)
    if relaxed:
        weights = mul(scale(sigmoid(a.arch_logits), 2.0), Tensor(gates.reshape(1, -1)))
        low = mul(low, weights)
    else:
        low = mul(low, Tensor(gates.reshape(1, -1)))
    return matmul(low, a.W_B)


def prune_ranks(a: AloraAdapter, ranks: Iterable[int]) -> AloraAdapter:
    """
    Close the gates of the listed ranks for good.

    Raises:
        RankIndexError: for an index outside [0, r)
        StateError: if a listed gate is already closed
    """
    ranks = sorted(set(int(i) for i in ranks))
    for index in ranks:
        if not 0 <= index < a.rank:
            raise RankIndexError(f"{a.module_id.label} has no rank {index}")
        if a.gates[index] == 0:
            raise StateError(f"rank {index} of {a.module_id.label} is already pruned")
    for index in ranks:
        a.gates[index] = 0.0
    return a


def grow_ranks(a: AloraAdapter, n_new: int, rng: np.random.Generator,
               init_std: float = DEFAULT_INIT_STD) -> AloraAdapter:
    """
    Append n_new fresh ranks: Gaussian W_A columns, zero W_B rows, open
    gates and zero arch logits. Existing values are kept bit-exactly.
    """
    if n_new < 1:
        raise ValueError(f"n_new must be at least 1, got {n_new}")
    new_a = Tensor(rng.normal(0.0, init_std, size=(a.d_in, n_new)))
    new_b = Tensor(np.zeros((n_new, a.d_out)))

    a.W_A = Tensor.parameter(concat_cols([a.W_A, new_a]).data, name=a.W_A.name)
    a.W_B = Tensor.parameter(concat_rows([a.W_B, new_b]).data, name=a.W_B.name)
    a.arch_logits = Tensor.parameter(
        concat_cols([a.arch_logits, Tensor(np.zeros((1, n_new)))]).data, name=a.arch_logits.name)
    a.gates = np.concatenate([a.gates, np.ones(n_new)])
    return a


def merge_into_base(a: AloraAdapter, W: Tensor) -> Tensor:
    """
    Fold the gated delta into a frozen weight.

    Returns:
        New tensor W + W_A·diag(gates)·W_B; W itself is left unmodified

    Raises:
        DimensionError: if W is not d_in×d_out
        StateError: if this adapter was already merged
    """
    if W.shape != (a.d_in, a.d_out):
        raise DimensionError(f"cannot merge {a.module_id.label} delta ({a.d_in}, {a.d_out}) into {W.shape}")
    if a.merged:
        raise StateError(f"adapter {a.module_id.label} is already merged")
    a.merged = True
    return Tensor.constant(W.data + a.delta_matrix(), name=W.name)


class RankCount(NamedTuple):
    """Active ranks per module and network-wide."""

    per_module: Dict[ModuleId, int]
    total: int


def active_rank_count(net) -> RankCount:
    """Count open gates across every adapter of a super-network"""
    per_module = {mid: a.active_rank_count for mid, a in sorted(net.adapters.items())}
    return RankCount(per_module, sum(per_module.values()))
