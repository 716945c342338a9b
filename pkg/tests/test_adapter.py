"""
Unit tests for gated adapters, gate masks, pruning, growth and merging
"""

import itertools

import pytest
import numpy as np
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from alora.bench.oracles import physical_ablation_oracle
from alora.bench.teacher_task import numerical_rank
from alora.core.adapter import (AloraAdapter, GateMask, active_rank_count, adapter_delta,
                                grow_ranks, merge_into_base, prune_ranks)
from alora.core.backbone import init_backbone
from alora.core.network import SuperNetwork, init_head
from alora.core.tensor import Tensor
from alora.errors import DimensionError, RankIndexError, StateError
from alora.models.config import ModelConfig
from alora.models.example import Batch, Example
from alora.models.module_id import ModuleId, ModuleKind

QUERY0 = ModuleId(0, ModuleKind.QUERY)
UP0 = ModuleId(0, ModuleKind.UP)


def trained_adapter(module_id, d_in, d_out, rank, rng) -> AloraAdapter:
    """Adapter with a non-zero up-projection, as after some training"""
    adapter = AloraAdapter.create(module_id, d_in, d_out, rank, rng, init_std=0.3)
    adapter.W_B = Tensor.parameter(rng.normal(0.0, 0.3, size=(rank, d_out)), name=adapter.W_B.name)
    return adapter


def small_net(seed: int = 0) -> SuperNetwork:
    """One-layer network with two rank-2 adapters (4 physical ranks)"""
    cfg = ModelConfig(n_layers=1, d=8, d_ff=12, n_heads=2, vocab_size=16, max_seq_len=6)
    rng = np.random.default_rng(seed)
    backbone = init_backbone(cfg, rng)
    head_W, head_b = init_head(cfg, rng)
    adapters = {QUERY0: trained_adapter(QUERY0, 8, 8, 2, rng),
                UP0: trained_adapter(UP0, 8, 12, 2, rng)}
    return SuperNetwork(cfg, backbone, Tensor.parameter(head_W), Tensor.parameter(head_b), adapters)


class TestAdapterDelta:
    """Low-rank delta and gating"""

    def setup_method(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(1)
        self.adapter = trained_adapter(QUERY0, 5, 4, 3, self.rng)
        self.x = Tensor(self.rng.normal(size=(2, 5)))

    def test_create_starts_silent(self):
        """Test a fresh adapter has W_B = 0, open gates and zero arch logits"""
        fresh = AloraAdapter.create(QUERY0, 5, 4, 3, self.rng)
        assert np.all(fresh.W_B.data == 0.0)
        assert fresh.gates.tolist() == [1.0, 1.0, 1.0]
        assert np.all(fresh.arch_logits.data == 0.0)
        assert np.all(adapter_delta(self.x, fresh).data == 0.0)

    def test_delta_matches_dense_product(self):
        """Test x·W_A·diag(g)·W_B computed factor-wise equals x times the dense delta"""
        self.adapter.gates[1] = 0.0
        out = adapter_delta(self.x, self.adapter).data
        np.testing.assert_allclose(out, self.x.data @ self.adapter.delta_matrix(), atol=1e-12)

    def test_closed_gate_removes_rank(self):
        """Test closing a gate equals deleting that rank's column and row"""
        self.adapter.gates[0] = 0.0
        expected = self.x.data @ self.adapter.W_A.data[:, 1:] @ self.adapter.W_B.data[1:, :]
        np.testing.assert_allclose(adapter_delta(self.x, self.adapter).data, expected, atol=1e-12)

    def test_relaxed_with_zero_logits_equals_binary(self):
        """Test 2·sigmoid(0) = 1 makes the relaxed delta equal the gated delta"""
        np.testing.assert_allclose(adapter_delta(self.x, self.adapter, relaxed=True).data,
                                   adapter_delta(self.x, self.adapter).data, atol=1e-12)

    def test_width_mismatch(self):
        """Test an input with the wrong width raises DimensionError"""
        with pytest.raises(DimensionError):
            adapter_delta(Tensor(np.zeros((1, 4))), self.adapter)


class TestGateMask:
    """Temporary ablation masks"""

    def setup_method(self):
        """Set up test fixtures"""
        self.adapter = trained_adapter(QUERY0, 4, 4, 3, np.random.default_rng(2))
        self.universe = self.adapter.rank_refs()

    def test_mask_does_not_mutate_gates(self):
        """Test applying a mask leaves the adapter's gates untouched"""
        mask = GateMask.zero_only([(QUERY0, 0)])
        assert mask.effective_gates(self.adapter).tolist() == [0.0, 1.0, 1.0]
        assert self.adapter.gates.tolist() == [1.0, 1.0, 1.0]

    def test_keep_only(self):
        """Test keep_only zeroes every other rank of the universe"""
        mask = GateMask.keep_only([(QUERY0, 2)], self.universe)
        assert mask.effective_gates(self.adapter).tolist() == [0.0, 0.0, 1.0]

    def test_mask_and_complement_partition_gates(self):
        """Test effective gates under a mask and under its complement sum to the gates"""
        self.adapter.gates[1] = 0.0
        universe = [(QUERY0, i) for i in range(3)]
        mask = GateMask.zero_only([(QUERY0, 0)])
        total = mask.effective_gates(self.adapter) + mask.complement(universe).effective_gates(self.adapter)
        np.testing.assert_array_equal(total, self.adapter.gates)

    def test_compose_is_union(self):
        """Test composing two masks zeroes the ranks of both"""
        mask = GateMask.zero_only([(QUERY0, 0)]).compose(GateMask.zero_only([(QUERY0, 2)]))
        assert len(mask) == 2
        assert mask.effective_gates(self.adapter).tolist() == [0.0, 1.0, 0.0]

    def test_out_of_range_rank(self):
        """Test a mask naming a rank past the adapter's rank raises RankIndexError"""
        with pytest.raises(RankIndexError):
            GateMask.zero_only([(QUERY0, 3)]).factors(self.adapter)

    def test_other_module_ignored(self):
        """Test entries for another module do not affect this adapter"""
        mask = GateMask.zero_only([(UP0, 0)])
        assert mask.effective_gates(self.adapter).tolist() == [1.0, 1.0, 1.0]


class TestMaskEquivalence:
    """Gated forward against physically rebuilt networks"""

    def setup_method(self):
        """Set up test fixtures"""
        self.net = small_net()
        self.batch = Batch([Example((1, 2, 3), 0), Example((4, 5, 6, 7), 1), Example((9,), 0)])

    def test_every_subset_of_four_ranks(self):
        """Test all 16 gate subsets agree with physical removal to 1e-10"""
        universe = self.net.rank_universe()
        assert len(universe) == 4
        for size in range(len(universe) + 1):
            for removed in itertools.combinations(universe, size):
                gated = self.net.logits(self.batch, mask=GateMask.zero_only(removed)).data
                physical = physical_ablation_oracle(self.net, removed).logits(self.batch).data
                np.testing.assert_allclose(gated, physical, atol=1e-10)

    def test_pruned_rank_matches_physical_removal(self):
        """Test a permanently pruned rank behaves like a deleted one"""
        prune_ranks(self.net.adapters[UP0], [1])
        physical = physical_ablation_oracle(self.net)
        assert physical.adapters[UP0].rank == 1
        np.testing.assert_allclose(self.net.logits(self.batch).data,
                                   physical.logits(self.batch).data, atol=1e-10)

    def test_oracle_size_limit(self):
        """Test the physical oracle refuses networks above 16 ranks"""
        big = SuperNetwork.random(ModelConfig(n_layers=1, d=8, d_ff=12, n_heads=2, vocab_size=16,
                                              max_seq_len=6), r_init=3, rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            physical_ablation_oracle(big)


class TestPruneAndGrow:
    """Permanent structure changes"""

    def setup_method(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(4)
        self.adapter = trained_adapter(UP0, 6, 9, 3, self.rng)

    def test_prune_closes_gates(self):
        """Test prune_ranks zeroes exactly the listed gates and keeps the columns"""
        prune_ranks(self.adapter, [0, 2])
        assert self.adapter.gates.tolist() == [0.0, 1.0, 0.0]
        assert self.adapter.rank == 3
        assert self.adapter.active_rank_count == 1

    def test_prune_twice(self):
        """Test pruning an already-closed gate raises StateError"""
        prune_ranks(self.adapter, [1])
        with pytest.raises(StateError):
            prune_ranks(self.adapter, [1])

    def test_prune_out_of_range(self):
        """Test pruning a non-existent rank raises RankIndexError"""
        with pytest.raises(RankIndexError):
            prune_ranks(self.adapter, [3])

    def test_grow_keeps_existing_values(self):
        """Test growth keeps old factors bit-exactly and leaves the delta unchanged"""
        old_a, old_b = self.adapter.W_A.data.copy(), self.adapter.W_B.data.copy()
        old_delta = self.adapter.delta_matrix()
        grow_ranks(self.adapter, 2, self.rng)
        assert self.adapter.rank == 5
        np.testing.assert_array_equal(self.adapter.W_A.data[:, :3], old_a)
        np.testing.assert_array_equal(self.adapter.W_B.data[:3], old_b)
        assert np.all(self.adapter.W_B.data[3:] == 0.0)
        assert self.adapter.gates.tolist() == [1.0] * 5
        assert self.adapter.arch_logits.shape == (1, 5)
        np.testing.assert_array_equal(self.adapter.delta_matrix(), old_delta)

    def test_grow_requires_positive_count(self):
        """Test growing by zero ranks raises ValueError"""
        with pytest.raises(ValueError):
            grow_ranks(self.adapter, 0, self.rng)

    def test_grown_parameters_stay_trainable(self):
        """Test grown factors are trainable parameters under the same names"""
        grow_ranks(self.adapter, 1, self.rng)
        assert self.adapter.W_A.requires_grad
        assert self.adapter.W_A.name == 'adapter.0.up.A'

    def test_active_rank_count(self):
        """Test network-wide counting of open gates"""
        net = small_net()
        prune_ranks(net.adapters[QUERY0], [0])
        counts = active_rank_count(net)
        assert counts.total == 3
        assert counts.per_module == {QUERY0: 1, UP0: 2}


class TestMerge:
    """Folding adapters into frozen weights"""

    def setup_method(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(5)
        self.adapter = trained_adapter(QUERY0, 6, 6, 4, self.rng)
        self.W = Tensor.constant(self.rng.normal(size=(6, 6)), name='backbone.0.query')

    def test_merge_adds_gated_delta(self):
        """Test the merged weight is W plus the gated delta and W is untouched"""
        before = self.W.data.copy()
        merged = merge_into_base(self.adapter, self.W)
        np.testing.assert_allclose(merged.data, before + self.adapter.delta_matrix(), atol=1e-14)
        np.testing.assert_array_equal(self.W.data, before)
        assert merged.name == 'backbone.0.query'

    def test_merged_delta_rank_bounded_by_active(self):
        """Test merge(W) - W has numerical rank at most the active rank count"""
        prune_ranks(self.adapter, [0, 3])
        merged = merge_into_base(self.adapter, self.W)
        assert numerical_rank(merged.data - self.W.data) <= 2

    def test_merge_twice(self):
        """Test a second merge of the same adapter raises StateError"""
        merge_into_base(self.adapter, self.W)
        with pytest.raises(StateError):
            merge_into_base(self.adapter, self.W)

    def test_merge_all_pruned_returns_base(self):
        """Test merging an adapter with every gate closed leaves W unchanged"""
        prune_ranks(self.adapter, range(4))
        np.testing.assert_array_equal(merge_into_base(self.adapter, self.W).data, self.W.data)

    def test_merge_shape_mismatch(self):
        """Test merging into a weight of another shape raises DimensionError"""
        with pytest.raises(DimensionError):
            merge_into_base(self.adapter, Tensor.constant(np.zeros((6, 5))))

    def test_merged_network_matches_adapter_form(self):
        """Test the dense merged network reproduces the adapter-form logits"""
        net = small_net(seed=9)
        prune_ranks(net.adapters[UP0], [0])
        batch = Batch([Example((1, 2, 3), 0), Example((5, 6), 1)])
        merged = net.merged()
        assert merged.adapters == {}
        np.testing.assert_allclose(merged.logits(batch).data, net.logits(batch).data, atol=1e-10)
        assert not any(a.merged for a in net.adapters.values())


if __name__ == '__main__':
    pytest.main(['-v', __file__])
