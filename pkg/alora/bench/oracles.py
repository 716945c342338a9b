"""
Oracles
Brute-force reference computations used to validate gating, scoring and gradients
"""

from typing import Callable, Dict, Iterable, Optional

import numpy as np

from alora.core.network import SuperNetwork, forward_loss
from alora.core.tensor import Tensor, no_tape
from alora.models.example import Batch
from alora.models.module_id import RankRef

MAX_ORACLE_RANKS = 16


def physical_ablation_oracle(net: SuperNetwork, removed: Iterable[RankRef] = ()) -> SuperNetwork:
    """
    Brand-new network with the removed ranks (and every pruned rank)
    physically deleted from W_A and W_B instead of gated.

    Raises:
        ValueError: if the network holds more than 16 physical ranks
    """
    physical = sum(a.rank for a in net.adapters.values())
    if physical > MAX_ORACLE_RANKS:
        raise ValueError(f"oracle is limited to {MAX_ORACLE_RANKS} ranks, network has {physical}")
    removed = set(removed)
    work = net.copy()
    for module_id, adapter in work.adapters.items():
        for ref in removed:
            if ref[0] == module_id:
                adapter.gates[ref[1]] = 0.0
        work.adapters[module_id] = adapter.compacted()
    return work


def oracle_metric(net: SuperNetwork, batch: Batch) -> float:
    with no_tape():
        return -forward_loss(batch, net).item()


def ablation_table_oracle(net: SuperNetwork, batch: Batch) -> Dict[RankRef, float]:
    """Importance of every active rank, each sub-network rebuilt physically"""
    universe = net.rank_universe()
    s_full = oracle_metric(physical_ablation_oracle(net), batch)
    table = {}
    for r in universe:
        without = physical_ablation_oracle(net, [r])
        alone = physical_ablation_oracle(net, [other for other in universe if other != r])
        table[r] = s_full - oracle_metric(without, batch) + oracle_metric(alone, batch)
    return table


def finite_difference_grad(fn: Callable[[], float], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """
    Central differences of a scalar function w.r.t. every entry of tensor.

    fn must read tensor.data when called; entries are perturbed in place
    and restored.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn()
        flat[i] = original - h
        minus = fn()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: Optional[float] = 1e-12) -> float:
    """||a - b|| / max(||a|| + ||b||, floor)"""
    num = float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
    den = float(np.linalg.norm(a) + np.linalg.norm(b))
    return num / max(den, floor)
