"""
Teacher Task Generator
Synthetic classification tasks labelled by a base model with planted low-rank deltas
"""

import logging
from typing import Dict, List, Tuple

import numpy as np
from scipy.linalg import svdvals

from alora.core.backbone import projection_shape
from alora.core.network import BaseModel, SuperNetwork
from alora.core.tensor import Tensor, no_tape
from alora.models.example import Batch, Example
from alora.models.module_id import ModuleId
from alora.models.teacher_spec import SyntheticTask, TeacherSpec
from alora.utils import derive_rng

logger = logging.getLogger(__name__)

LOGIT_CHUNK = 64


def planted_delta(d_in: int, d_out: int, rank: int, scale: float,
                  rng: np.random.Generator) -> np.ndarray:
    """
    Gaussian factors U (d_in×k) and V (k×d_out), product scaled to spectral norm scale.

    Returns:
        d_in×d_out matrix of numerical rank exactly k (zeros when k = 0)
    """
    if rank == 0:
        return np.zeros((d_in, d_out))
    if rank > min(d_in, d_out):
        raise ValueError(f"rank {rank} exceeds matrix shape ({d_in}, {d_out})")
    delta = rng.normal(size=(d_in, rank)) @ rng.normal(size=(rank, d_out))
    return delta * (scale / svdvals(delta)[0])


def numerical_rank(matrix: np.ndarray, tol: float = 1e-10) -> int:
    """Count of singular values above tol times the largest one"""
    s = svdvals(matrix)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def teacher_logits(net: SuperNetwork, examples: List[Example]) -> np.ndarray:
    with no_tape():
        return np.concatenate([net.logits(batch).data for batch in Batch.chunks(examples, LOGIT_CHUNK)])


def gen_teacher_task(spec: TeacherSpec) -> Tuple[BaseModel, SyntheticTask]:
    """
    Build a teacher from a random base plus planted deltas and label random sequences.

    The student receives only the base model (backbone and head). The head
    bias is set so the teacher's classes are balanced on the sample.

    Args:
        spec: Planted ranks and data settings

    Returns:
        (base model handed to the student, labelled task)

    Raises:
        ValueError: if a planted rank exceeds the matrix shape
    """
    cfg = spec.model
    init_rng = derive_rng(spec.seed, 'init')
    base = BaseModel.random(cfg, init_rng)

    delta_rng = derive_rng(spec.seed, 'teacher')
    deltas: Dict[ModuleId, np.ndarray] = {}
    teacher_backbone = base.backbone.copy()
    for module_id in sorted(spec.true_ranks):
        rank = spec.true_ranks[module_id]
        if rank == 0:
            continue
        d_in, d_out = projection_shape(module_id.kind, cfg)
        delta = planted_delta(d_in, d_out, rank, spec.delta_scale, delta_rng)
        deltas[module_id] = delta
        block = teacher_backbone.blocks[module_id.layer]
        weight = block[module_id.kind]
        block.projections[module_id.kind] = Tensor.constant(weight.data + delta, name=weight.name)

    data_rng = derive_rng(spec.seed, 'data')
    tokens = data_rng.integers(0, cfg.vocab_size, size=(spec.n_examples, spec.seq_len))
    unlabelled = [Example(tuple(int(t) for t in row), 0) for row in tokens]

    teacher = SuperNetwork(cfg, teacher_backbone, Tensor.parameter(base.head_W),
                           Tensor.parameter(base.head_b), {})
    logits = teacher_logits(teacher, unlabelled)
    balance = -logits.mean(axis=0, keepdims=True)
    base.head_b = base.head_b + balance
    labels = np.argmax(logits + balance, axis=1)

    if spec.noise > 0:
        flips = data_rng.random(spec.n_examples) < spec.noise
        shifts = data_rng.integers(1, cfg.n_classes, size=spec.n_examples)
        labels = np.where(flips, (labels + shifts) % cfg.n_classes, labels)

    examples = [Example(ex.tokens, int(label)) for ex, label in zip(unlabelled, labels)]
    student_pred = np.argmax(teacher_logits(base.plain(), unlabelled), axis=1)
    agreement = float(np.mean(student_pred == labels))

    logger.info(f"Generated {len(examples)} teacher examples, {len(deltas)} planted deltas, "
                f"student agreement at init {agreement:.3f}")
    return base, SyntheticTask(spec=spec, examples=examples, deltas=deltas,
                               agreement_at_init=agreement)
