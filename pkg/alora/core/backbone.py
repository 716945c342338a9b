"""
Backbone
Miniature pre-layernorm transformer with seven adapter attachment points per block
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from alora.core.adapter import AloraAdapter, GateMask, adapter_delta
from alora.core.tensor import (Tensor, concat_cols, gelu, layernorm, matmul, mul, scale,
                               slice_cols, softmax_rows, transpose)
from alora.errors import ConfigurationError, DimensionError
from alora.models.config import ModelConfig
from alora.models.module_id import ATTENTION_KINDS, FFN_KINDS, ModuleKind

logger = logging.getLogger(__name__)

AdapterSlots = Mapping[ModuleKind, AloraAdapter]


@dataclass
class BlockWeights:
    """
    Frozen weights of one transformer block.

    Attributes:
        projections: ModuleKind -> weight matrix (Q/K/V/O d×d, Gate/Up d×d', Down d'×d)
        ln1_gamma, ln1_beta: affine parameters of the pre-attention layernorm (1×d)
        ln2_gamma, ln2_beta: affine parameters of the pre-FFN layernorm (1×d)
        n_heads: number of attention heads
    """

    projections: Dict[ModuleKind, Tensor]
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    n_heads: int

    def __getitem__(self, kind: ModuleKind) -> Tensor:
        return self.projections[kind]

    @property
    def d(self) -> int:
        return self.projections[ModuleKind.QUERY].shape[0]

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def layernorm_params(self) -> Dict[str, Tensor]:
        return {'ln1.gamma': self.ln1_gamma, 'ln1.beta': self.ln1_beta,
                'ln2.gamma': self.ln2_gamma, 'ln2.beta': self.ln2_beta}

    def copy(self) -> 'BlockWeights':
        return BlockWeights(
            projections={k: Tensor.constant(t.data, name=t.name) for k, t in self.projections.items()},
            ln1_gamma=Tensor.constant(self.ln1_gamma.data, name=self.ln1_gamma.name),
            ln1_beta=Tensor.constant(self.ln1_beta.data, name=self.ln1_beta.name),
            ln2_gamma=Tensor.constant(self.ln2_gamma.data, name=self.ln2_gamma.name),
            ln2_beta=Tensor.constant(self.ln2_beta.data, name=self.ln2_beta.name),
            n_heads=self.n_heads,
        )


@dataclass
class BackboneWeights:
    """Frozen embeddings, blocks and final layernorm."""

    token_embedding: Tensor
    position_embedding: Tensor
    blocks: List[BlockWeights]
    final_gamma: Tensor
    final_beta: Tensor

    def named_tensors(self) -> List[Tuple[str, Tensor]]:
        """Every frozen tensor under its checkpoint name, in a fixed order"""
        named = [('backbone.token_embedding', self.token_embedding),
                 ('backbone.position_embedding', self.position_embedding)]
        for layer, block in enumerate(self.blocks):
            for kind in ModuleKind:
                named.append((f"backbone.{layer}.{kind.slug}", block[kind]))
            for suffix, tensor in block.layernorm_params().items():
                named.append((f"backbone.{layer}.{suffix}", tensor))
        named.append(('backbone.final.gamma', self.final_gamma))
        named.append(('backbone.final.beta', self.final_beta))
        return named

    def copy(self) -> 'BackboneWeights':
        return BackboneWeights(
            token_embedding=Tensor.constant(self.token_embedding.data, name=self.token_embedding.name),
            position_embedding=Tensor.constant(self.position_embedding.data,
                                               name=self.position_embedding.name),
            blocks=[b.copy() for b in self.blocks],
            final_gamma=Tensor.constant(self.final_gamma.data, name=self.final_gamma.name),
            final_beta=Tensor.constant(self.final_beta.data, name=self.final_beta.name),
        )


def projection_shape(kind: ModuleKind, cfg: ModelConfig) -> Tuple[int, int]:
    """(d_in, d_out) of the frozen projection at an attachment point"""
    if kind.is_attention:
        return cfg.d, cfg.d
    if kind == ModuleKind.DOWN:
        return cfg.d_ff, cfg.d
    return cfg.d, cfg.d_ff


def init_block(cfg: ModelConfig, rng: np.random.Generator, layer: int = 0) -> BlockWeights:
    """Gaussian projections with variance 1/d_in, identity layernorm affine"""
    projections = {}
    for kind in ModuleKind:
        d_in, d_out = projection_shape(kind, cfg)
        projections[kind] = Tensor.constant(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)),
                                            name=f"backbone.{layer}.{kind.slug}")
    ones, zeros = np.ones((1, cfg.d)), np.zeros((1, cfg.d))
    return BlockWeights(
        projections=projections,
        ln1_gamma=Tensor.constant(ones, name=f"backbone.{layer}.ln1.gamma"),
        ln1_beta=Tensor.constant(zeros, name=f"backbone.{layer}.ln1.beta"),
        ln2_gamma=Tensor.constant(ones, name=f"backbone.{layer}.ln2.gamma"),
        ln2_beta=Tensor.constant(zeros, name=f"backbone.{layer}.ln2.beta"),
        n_heads=cfg.n_heads,
    )


def init_backbone(cfg: ModelConfig, rng: np.random.Generator) -> BackboneWeights:
    """
    Draw a random frozen backbone.

    Args:
        cfg: Model shape
        rng: Seeded generator ("init" stream)

    Returns:
        BackboneWeights with N(0, 1) embeddings
    """
    token_embedding = rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.d))
    position_embedding = rng.normal(0.0, 1.0, size=(cfg.max_seq_len, cfg.d))
    blocks = [init_block(cfg, rng, layer) for layer in range(cfg.n_layers)]
    return BackboneWeights(
        token_embedding=Tensor.constant(token_embedding, name='backbone.token_embedding'),
        position_embedding=Tensor.constant(position_embedding, name='backbone.position_embedding'),
        blocks=blocks,
        final_gamma=Tensor.constant(np.ones((1, cfg.d)), name='backbone.final.gamma'),
        final_beta=Tensor.constant(np.zeros((1, cfg.d)), name='backbone.final.beta'),
    )


def _check_slots(adapters: Optional[AdapterSlots], attention: bool, where: str):
    if not adapters:
        return
    for kind in adapters:
        if ModuleKind(kind).is_attention != attention:
            raise ConfigurationError(f"{ModuleKind(kind).slug} adapter cannot attach to {where}",
                                     field_path=f"adapters.{ModuleKind(kind).slug}")


def project(x: Tensor, weight: Tensor, adapter: Optional[AloraAdapter] = None,
            mask: Optional[GateMask] = None, relaxed: bool = False) -> Tensor:
    """x·W, plus the adapter delta when one is attached"""
    out = matmul(x, weight)
    if adapter is not None:
        out = out + adapter_delta(x, adapter, mask=mask, relaxed=relaxed)
    return out


def mha_forward(x: Tensor, w: BlockWeights, adapters: Optional[AdapterSlots] = None,
                attn_bias: Optional[np.ndarray] = None, mask: Optional[GateMask] = None,
                relaxed: bool = False) -> Tensor:
    """
    Multi-head scaled dot-product attention with optional adapters.

    Args:
        x: l×d input
        w: Block weights
        adapters: Query/Key/Value/Output adapters keyed by ModuleKind
        attn_bias: l×l additive bias (block-diagonal for packed batches)
        mask: Temporary gate ablation
        relaxed: Use 2·sigmoid(arch_logits) gates instead of binary gates

    Returns:
        l×d tensor
    """
    if x.shape[1] != w.d:
        raise DimensionError(f"mha_forward: input width {x.shape[1]} does not match d = {w.d}")
    _check_slots(adapters, attention=True, where='attention')
    adapters = adapters or {}

    def proj(kind, inp):
        return project(inp, w[kind], adapters.get(kind), mask, relaxed)

    q = proj(ModuleKind.QUERY, x)
    k = proj(ModuleKind.KEY, x)
    v = proj(ModuleKind.VALUE, x)

    head_dim = w.head_dim
    bias = Tensor(attn_bias) if attn_bias is not None else None
    heads = []
    for h in range(w.n_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        q_h, k_h, v_h = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
        scores = scale(matmul(q_h, transpose(k_h)), 1.0 / math.sqrt(head_dim))
        if bias is not None:
            scores = scores + bias
        heads.append(matmul(softmax_rows(scores), v_h))

    merged = heads[0] if len(heads) == 1 else concat_cols(heads)
    return proj(ModuleKind.OUTPUT, merged)


def ffn_forward(x: Tensor, w: BlockWeights, adapters: Optional[AdapterSlots] = None,
                mask: Optional[GateMask] = None, relaxed: bool = False) -> Tensor:
    """Gated feed-forward: (gelu(x·W_G) * x·W_U)·W_D with optional adapters"""
    if x.shape[1] != w.d:
        raise DimensionError(f"ffn_forward: input width {x.shape[1]} does not match d = {w.d}")
    _check_slots(adapters, attention=False, where='the feed-forward network')
    adapters = adapters or {}

    gate = gelu(project(x, w[ModuleKind.GATE], adapters.get(ModuleKind.GATE), mask, relaxed))
    up = project(x, w[ModuleKind.UP], adapters.get(ModuleKind.UP), mask, relaxed)
    return project(mul(gate, up), w[ModuleKind.DOWN], adapters.get(ModuleKind.DOWN), mask, relaxed)


def block_forward(x: Tensor, w: BlockWeights, adapters: Optional[AdapterSlots] = None,
                  attn_bias: Optional[np.ndarray] = None, mask: Optional[GateMask] = None,
                  relaxed: bool = False) -> Tensor:
    """Pre-layernorm residual block: h = x + MHA(LN1 x); out = h + FFN(LN2 h)"""
    adapters = adapters or {}
    attention_slots = {k: a for k, a in adapters.items() if ModuleKind(k) in ATTENTION_KINDS}
    ffn_slots = {k: a for k, a in adapters.items() if ModuleKind(k) in FFN_KINDS}

    h = x + mha_forward(layernorm(x, w.ln1_gamma, w.ln1_beta), w, attention_slots,
                        attn_bias=attn_bias, mask=mask, relaxed=relaxed)
    return h + ffn_forward(layernorm(h, w.ln2_gamma, w.ln2_beta), w, ffn_slots,
                           mask=mask, relaxed=relaxed)
