"""
Unit tests for synthetic tasks, rank recovery and task files
"""

import pytest
import numpy as np
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from alora.bench.recovery import (allocation_from_plans, rank_recovery_metric,
                                  recovery_from_allocation)
from alora.bench.smoke_corpus import smoke_corpus, smoke_phrases
from alora.bench.teacher_task import gen_teacher_task, numerical_rank, planted_delta
from alora.models.config import ModelConfig, TaskConfig
from alora.models.module_id import ModuleId, ModuleKind
from alora.models.plan import AllocationPlan
from alora.models.teacher_spec import TeacherSpec
from alora.utils.task_io import TaskDataset

TINY = ModelConfig(n_layers=1, d=8, d_ff=12, n_heads=2, vocab_size=16, max_seq_len=6)
Q0 = ModuleId(0, ModuleKind.QUERY)
K0 = ModuleId(0, ModuleKind.KEY)
V0 = ModuleId(0, ModuleKind.VALUE)


class TestPlantedDeltas:
    """Low-rank teacher deltas"""

    def setup_method(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(0)

    def test_rank_and_scale(self):
        """Test a planted delta has the requested rank and spectral norm"""
        delta = planted_delta(8, 12, 3, 2.0, self.rng)
        assert delta.shape == (8, 12)
        assert numerical_rank(delta) == 3
        assert np.linalg.norm(delta, 2) == pytest.approx(2.0)

    def test_zero_rank(self):
        """Test rank 0 plants nothing"""
        assert numerical_rank(planted_delta(8, 8, 0, 1.0, self.rng)) == 0

    def test_rank_above_shape(self):
        """Test a rank beyond min(d_in, d_out) raises ValueError"""
        with pytest.raises(ValueError):
            planted_delta(4, 6, 5, 1.0, self.rng)


class TestTeacherTask:
    """Teacher-labelled synthetic tasks"""

    def setup_method(self):
        """Set up test fixtures"""
        ranks = {mid: 0 for mid in TeacherSpec.uniform(TINY, 0).true_ranks}
        ranks[Q0] = 4
        ranks[ModuleId(0, ModuleKind.UP)] = 2
        self.spec = TeacherSpec(ranks, model=TINY, n_examples=200, seq_len=4, seed=3)

    def test_planted_ranks_match_spec(self):
        """Test every planted delta has exactly its specified rank"""
        _, task = gen_teacher_task(self.spec)
        assert set(task.deltas) == {Q0, ModuleId(0, ModuleKind.UP)}
        assert numerical_rank(task.deltas[Q0]) == 4
        assert numerical_rank(task.deltas[ModuleId(0, ModuleKind.UP)]) == 2

    def test_generation_is_seeded(self):
        """Test one spec always produces the same examples and base"""
        base_a, task_a = gen_teacher_task(self.spec)
        base_b, task_b = gen_teacher_task(self.spec)
        assert task_a.examples == task_b.examples
        np.testing.assert_array_equal(base_a.head_b, base_b.head_b)

    def test_examples_follow_spec(self):
        """Test example count, length and label range"""
        _, task = gen_teacher_task(self.spec)
        assert len(task.examples) == 200
        assert all(ex.length == 4 for ex in task.examples)
        assert set(task.labels.tolist()) <= {0, 1}
        assert 0.0 <= task.agreement_at_init <= 1.0

    def test_from_task_config(self):
        """Test kind keys cover every layer and layer keys override them"""
        model = ModelConfig(n_layers=2)
        task = TaskConfig(true_ranks={'query': 6, '1.query': 2}, default_rank=1)
        spec = TeacherSpec.from_task_config(task, model, seed=5)
        assert spec.true_ranks[ModuleId(0, ModuleKind.QUERY)] == 6
        assert spec.true_ranks[ModuleId(1, ModuleKind.QUERY)] == 2
        assert spec.true_ranks[ModuleId(1, ModuleKind.DOWN)] == 1
        assert spec.seed == 5

    def test_negative_rank(self):
        """Test a negative planted rank is rejected"""
        with pytest.raises(ValueError):
            TeacherSpec({Q0: -1}, model=TINY)


class TestRankRecovery:
    """Spearman agreement between final and planted ranks"""

    def setup_method(self):
        """Set up test fixtures"""
        self.spec = TeacherSpec({Q0: 4, K0: 2, V0: 0}, model=TINY)

    def test_plans_replay_to_counts(self):
        """Test prune and grow counts replay from r_init"""
        plans = [AllocationPlan(round=1, prune_set=[(V0, 0), (V0, 1)], grow_map={Q0: 2})]
        assert allocation_from_plans(plans, [Q0, K0, V0], r_init=2) == {Q0: 4, K0: 2, V0: 0}

    def test_perfect_recovery(self):
        """Test an allocation ordered like the truth scores 1"""
        score = recovery_from_allocation({Q0: 5, K0: 3, V0: 1}, self.spec)
        assert score.value == pytest.approx(1.0)
        assert not score.degenerate

    def test_reversed_recovery(self):
        """Test a reversed allocation scores 0"""
        assert recovery_from_allocation({Q0: 1, K0: 3, V0: 5}, self.spec).value == pytest.approx(0.0)

    def test_uniform_allocation_is_degenerate(self):
        """Test a uniform allocation scores 0.5 and is flagged"""
        score = rank_recovery_metric([], self.spec, r_init=2)
        assert score == (0.5, True)


class TestSmokeCorpus:
    """The bundled sentiment toy set"""

    def test_phrases_fit_length(self):
        """Test every phrase fits max_len and labels are binary"""
        phrases = smoke_phrases(12)
        assert phrases
        assert all(len(text) <= 12 and label in (0, 1) for text, label in phrases)

    def test_negation_flips_label(self):
        """Test a negated phrase carries the opposite label"""
        labels = dict(smoke_phrases(16))
        assert labels['good'] == 1
        assert labels['not good'] == 0
        assert labels['not so bad'] == 1

    def test_seeded_sample(self):
        """Test one seed gives one sample of distinct examples within the vocabulary"""
        a = smoke_corpus(300, max_len=12, vocab_size=64, seed=1)
        b = smoke_corpus(300, max_len=12, vocab_size=64, seed=1)
        assert a == b
        assert len(a) == 300
        assert all(0 <= t < 64 for ex in a for t in ex.tokens)


class TestTaskFiles:
    """JSON-lines task files and their sidecars"""

    def setup_method(self):
        """Set up test fixtures"""
        self.dataset = TaskDataset()

    def test_round_trip_with_sidecar(self, tmp_path):
        """Test examples and sidecar spec survive save and load"""
        spec = TeacherSpec({Q0: 2}, model=TINY, n_examples=40)
        examples = smoke_corpus(40, max_len=6, vocab_size=16)
        path = str(tmp_path / 'task.jsonl')
        self.dataset.save(path, examples, spec.to_dict())
        loaded, sidecar = self.dataset.load(path)
        assert loaded == examples
        assert TeacherSpec.from_dict(sidecar) == spec

    def test_missing_sidecar(self, tmp_path):
        """Test a task file without a sidecar loads with no spec"""
        path = str(tmp_path / 'plain.jsonl')
        self.dataset.save(path, smoke_corpus(35, max_len=6, vocab_size=16))
        _, sidecar = self.dataset.load(path)
        assert sidecar is None

    def test_malformed_line(self, tmp_path):
        """Test a bad line raises ValueError naming its line number"""
        path = tmp_path / 'bad.jsonl'
        path.write_text('{"tokens": [1, 2], "label": 0}\n{"tokens": [3]}\n')
        with pytest.raises(ValueError, match=':2:'):
            self.dataset.load(str(path))


if __name__ == '__main__':
    pytest.main(['-v', __file__])
