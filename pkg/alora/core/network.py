"""
Super-Network
Frozen backbone plus one gated adapter per attachment point and a trainable head
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from alora.core.adapter import AloraAdapter, GateMask, merge_into_base
from alora.core.backbone import (BackboneWeights, BlockWeights, block_forward, init_backbone,
                                 projection_shape)
from alora.core.tensor import (Tensor, layernorm, matmul, softmax_cross_entropy, take_rows)
from alora.errors import DimensionError
from alora.models.config import ModelConfig
from alora.models.example import Batch
from alora.models.module_id import ModuleId, ModuleKind

logger = logging.getLogger(__name__)


class SuperNetwork:
    """
    The model being fine-tuned.

    Only adapter W_A/W_B and the classification head are trainable; the
    backbone is frozen and its checksum is stable for the whole run.
    """

    def __init__(self, cfg: ModelConfig, backbone: BackboneWeights, head_W: Tensor,
                 head_b: Tensor, adapters: Optional[Dict[ModuleId, AloraAdapter]] = None):
        self.cfg = cfg
        self.backbone = backbone
        self.head_W = head_W
        self.head_b = head_b
        self.adapters: Dict[ModuleId, AloraAdapter] = dict(adapters or {})

    @classmethod
    def from_base(cls, cfg: ModelConfig, backbone: BackboneWeights, head_W: np.ndarray,
                  head_b: np.ndarray, r_init: int, rng: np.random.Generator,
                  init_std: float = 0.02) -> 'SuperNetwork':
        """Attach fresh rank-r_init adapters to every module of a frozen backbone"""
        adapters = {}
        for layer in range(cfg.n_layers):
            for kind in ModuleKind:
                module_id = ModuleId(layer, kind)
                d_in, d_out = projection_shape(kind, cfg)
                adapters[module_id] = AloraAdapter.create(module_id, d_in, d_out, r_init, rng, init_std)
        return cls(cfg, backbone.copy(),
                   Tensor.parameter(head_W, name='head.W'),
                   Tensor.parameter(head_b, name='head.b'),
                   adapters)

    @classmethod
    def random(cls, cfg: ModelConfig, r_init: int, rng: np.random.Generator) -> 'SuperNetwork':
        """Random backbone and head, mostly for tests"""
        backbone = init_backbone(cfg, rng)
        head_W, head_b = init_head(cfg, rng)
        return cls.from_base(cfg, backbone, head_W, head_b, r_init, rng)

    def adapters_for_layer(self, layer: int) -> Dict[ModuleKind, AloraAdapter]:
        return {mid.kind: a for mid, a in self.adapters.items() if mid.layer == layer}

    def module_ids(self) -> List[ModuleId]:
        return sorted(self.adapters)

    def rank_universe(self) -> List[Tuple[ModuleId, int]]:
        """Every active rank, ordered by (layer, module, index)"""
        refs = []
        for module_id in self.module_ids():
            refs.extend(self.adapters[module_id].rank_refs())
        return refs

    def logits(self, batch: Batch, mask: Optional[GateMask] = None, relaxed: bool = False) -> Tensor:
        """
        Forward pass to class logits.

        Args:
            batch: Packed batch
            mask: Temporary gate ablation
            relaxed: Use relaxed gates (DNAS scorer only)

        Returns:
            b×n_classes tensor
        """
        if batch.max_length > self.cfg.max_seq_len:
            raise DimensionError(
                f"sequence length {batch.max_length} exceeds max_seq_len = {self.cfg.max_seq_len}")
        x = take_rows(self.backbone.token_embedding, batch.token_ids) + \
            take_rows(self.backbone.position_embedding, batch.positions)
        for layer, block in enumerate(self.backbone.blocks):
            x = block_forward(x, block, self.adapters_for_layer(layer),
                              attn_bias=batch.attention_bias, mask=mask, relaxed=relaxed)
        x = layernorm(x, self.backbone.final_gamma, self.backbone.final_beta)
        pooled = matmul(Tensor(batch.pooling), x)
        return matmul(pooled, self.head_W) + self.head_b

    def named_trainable(self) -> List[Tuple[str, Tensor]]:
        """Adapter factors and head parameters; architecture logits are excluded"""
        named = []
        for module_id in self.module_ids():
            a = self.adapters[module_id]
            named.append((f"adapter.{module_id.label}.A", a.W_A))
            named.append((f"adapter.{module_id.label}.B", a.W_B))
        named.append(('head.W', self.head_W))
        named.append(('head.b', self.head_b))
        return named

    def named_frozen(self) -> List[Tuple[str, Tensor]]:
        return self.backbone.named_tensors()

    def zero_grad(self):
        for _, tensor in self.named_trainable():
            tensor.zero_grad()
        for a in self.adapters.values():
            a.arch_logits.zero_grad()

    def frozen_checksum(self) -> str:
        """sha256 over every frozen tensor's name, shape and bytes"""
        digest = hashlib.sha256()
        for name, tensor in self.named_frozen():
            digest.update(name.encode())
            digest.update(str(tensor.shape).encode())
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()

    def copy(self) -> 'SuperNetwork':
        return SuperNetwork(
            self.cfg, self.backbone.copy(),
            Tensor.parameter(self.head_W.data, name='head.W'),
            Tensor.parameter(self.head_b.data, name='head.b'),
            {mid: a.copy() for mid, a in self.adapters.items()},
        )

    def without_adapters(self) -> 'SuperNetwork':
        """Same backbone and head with no adapters attached"""
        return SuperNetwork(self.cfg, self.backbone.copy(),
                            Tensor.parameter(self.head_W.data, name='head.W'),
                            Tensor.parameter(self.head_b.data, name='head.b'), {})

    def merged(self) -> 'SuperNetwork':
        """Dense network with every adapter folded into its base weight"""
        work = self.copy()
        for module_id, adapter in work.adapters.items():
            block = work.backbone.blocks[module_id.layer]
            block.projections[module_id.kind] = merge_into_base(adapter, block[module_id.kind])
        return work.without_adapters()

    def gate_state(self) -> Dict[str, List[int]]:
        """Gate vectors by module label, for replay comparisons"""
        return {mid.label: [int(g) for g in self.adapters[mid].gates] for mid in self.module_ids()}

    def to_tensors(self) -> Dict[str, np.ndarray]:
        """Flat name -> array mapping for the checkpoint container"""
        tensors = {name: t.data for name, t in self.named_frozen()}
        tensors['head.W'] = self.head_W.data
        tensors['head.b'] = self.head_b.data
        for module_id in self.module_ids():
            a = self.adapters[module_id]
            prefix = f"adapter.{module_id.label}"
            tensors[f"{prefix}.A"] = a.W_A.data
            tensors[f"{prefix}.B"] = a.W_B.data
            tensors[f"{prefix}.gates"] = a.gates.reshape(1, -1)
            tensors[f"{prefix}.arch"] = a.arch_logits.data
        return tensors

    @classmethod
    def from_tensors(cls, cfg: ModelConfig, tensors: Dict[str, np.ndarray]) -> 'SuperNetwork':
        """Rebuild a network from the mapping written by to_tensors"""
        def const(name):
            return Tensor.constant(tensors[name], name=name)

        blocks = [
            BlockWeights(
                projections={kind: const(f"backbone.{layer}.{kind.slug}") for kind in ModuleKind},
                ln1_gamma=const(f"backbone.{layer}.ln1.gamma"),
                ln1_beta=const(f"backbone.{layer}.ln1.beta"),
                ln2_gamma=const(f"backbone.{layer}.ln2.gamma"),
                ln2_beta=const(f"backbone.{layer}.ln2.beta"),
                n_heads=cfg.n_heads,
            )
            for layer in range(cfg.n_layers)
        ]
        backbone = BackboneWeights(const('backbone.token_embedding'),
                                   const('backbone.position_embedding'),
                                   blocks, const('backbone.final.gamma'), const('backbone.final.beta'))

        adapters = {}
        for name in tensors:
            if not name.startswith('adapter.') or not name.endswith('.A'):
                continue
            _, layer, slug, _ = name.split('.')
            module_id = ModuleId(int(layer), ModuleKind.from_slug(slug))
            prefix = f"adapter.{module_id.label}"
            adapters[module_id] = AloraAdapter(
                module_id=module_id,
                W_A=Tensor.parameter(tensors[f"{prefix}.A"], name=f"{prefix}.A"),
                W_B=Tensor.parameter(tensors[f"{prefix}.B"], name=f"{prefix}.B"),
                gates=np.array(tensors[f"{prefix}.gates"], dtype=np.float64).reshape(-1),
                arch_logits=Tensor.parameter(tensors[f"{prefix}.arch"], name=f"{prefix}.arch"),
            )
        return cls(cfg, backbone, Tensor.parameter(tensors['head.W'], name='head.W'),
                   Tensor.parameter(tensors['head.b'], name='head.b'), adapters)


@dataclass
class BaseModel:
    """Frozen backbone plus the starting classification head."""

    cfg: ModelConfig
    backbone: BackboneWeights
    head_W: np.ndarray
    head_b: np.ndarray

    @classmethod
    def random(cls, cfg: ModelConfig, rng: np.random.Generator) -> 'BaseModel':
        backbone = init_backbone(cfg, rng)
        head_W, head_b = init_head(cfg, rng)
        return cls(cfg, backbone, head_W, head_b)

    def student(self, r_init: int, rng: np.random.Generator, init_std: float = 0.02) -> SuperNetwork:
        """Super-network with fresh rank-r_init adapters on every module"""
        return SuperNetwork.from_base(self.cfg, self.backbone, self.head_W, self.head_b,
                                      r_init, rng, init_std)

    def plain(self) -> SuperNetwork:
        """The base model itself, with no adapters attached"""
        return SuperNetwork(self.cfg, self.backbone.copy(),
                            Tensor.parameter(self.head_W, name='head.W'),
                            Tensor.parameter(self.head_b, name='head.b'), {})


def init_head(cfg: ModelConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Head weights N(0, 1/d) with zero bias"""
    return rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(cfg.d, cfg.n_classes)), np.zeros((1, cfg.n_classes))


def forward_loss(batch: Batch, net: SuperNetwork, mask: Optional[GateMask] = None,
                 relaxed: bool = False, reduction: str = 'mean') -> Tensor:
    """Mean cross-entropy of the network's predictions on a batch"""
    return softmax_cross_entropy(net.logits(batch, mask=mask, relaxed=relaxed), batch.labels,
                                 reduction=reduction)
