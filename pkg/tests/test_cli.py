"""
Tests for the command-line commands, their artifacts and exit codes
"""

import json
import pytest
import numpy as np
import pandas as pd
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from alora.bench import rank_recovery_metric
from alora.cli import main
from alora.cli.routes import allocation_pivot, probe_batch
from alora.core.experiment import (ALLOCATION_FILE, CHECKPOINT_FILE, PLAN_HISTORY_FILE,
                                   RUN_ARTIFACTS, SUMMARY_FILE, ExperimentRunner, importance_file)
from alora.core.network import SuperNetwork
from alora.core.trainer import dev_loss
from alora.models.config import ModelConfig, RunConfig
from alora.models.teacher_spec import TeacherSpec
from alora.utils import CheckpointCodec, JSONFormatter

TINY_CONFIG = {
    'model': {'n_layers': 1, 'd': 8, 'd_ff': 12, 'n_heads': 2, 'vocab_size': 16, 'max_seq_len': 6},
    'train': {'batch_size': 8, 'max_epochs': 1.5, 'eval_every_steps': 4},
    'alloc': {'r_init': 2, 'n_per_round': 3, 'n_rounds': 2, 'k1_epochs': 0.5, 'k2_epochs': 0.25,
              'b_val': 8},
    'task': {'kind': 'teacher', 'true_ranks': {'query': 2}, 'default_rank': 0, 'n_examples': 100,
             'seq_len': 4},
    'seeds': [0],
    'budget_multipliers': [1, 2],
}


def write_config(directory, raw=None, **changes) -> str:
    """Write a run config with top-level or section overrides"""
    config = json.loads(json.dumps(raw or TINY_CONFIG))
    for key, value in changes.items():
        if isinstance(value, dict):
            config.setdefault(key, {}).update(value)
        else:
            config[key] = value
    path = os.path.join(str(directory), 'config.json')
    with open(path, 'w') as f:
        json.dump(config, f)
    return path


class TestRunCommand:
    """The run command"""

    def test_writes_every_artifact(self, tmp_path):
        """Test a run exits 0 and writes every artifact plus one table per round"""
        out = tmp_path / 'run'
        assert main(['run', '--config', write_config(tmp_path), '--out', str(out)]) == 0
        for name in RUN_ARTIFACTS:
            assert (out / name).is_file(), name
        assert (out / importance_file(1)).is_file()
        assert (out / importance_file(2)).is_file()
        history = json.loads((out / PLAN_HISTORY_FILE).read_text())
        assert [plan['scores_csv'] for plan in history] == [importance_file(1), importance_file(2)]
        summary = json.loads((out / SUMMARY_FILE).read_text())
        assert summary['budget']['total'] <= summary['budget']['r_target'] == 14

    def test_summary_reports_rank_recovery(self, tmp_path, capsys):
        """Test a teacher run stores and prints its rank recovery"""
        out = tmp_path / 'run'
        path = write_config(tmp_path)
        assert main(['run', '--config', path, '--out', str(out)]) == 0
        assert 'rank recovery' in capsys.readouterr().out
        summary = json.loads((out / SUMMARY_FILE).read_text())
        assert 0.0 <= summary['rank_recovery'] <= 1.0
        assert isinstance(summary['rank_recovery_degenerate'], bool)

        cfg = RunConfig.from_dict(json.loads(open(path).read()))
        spec = TeacherSpec.from_task_config(cfg.task, cfg.model, cfg.seed)
        plans = JSONFormatter().parse_plan_history(json.loads((out / PLAN_HISTORY_FILE).read_text()))
        expected = rank_recovery_metric(plans, spec, cfg.alloc.r_init)
        assert summary['rank_recovery'] == pytest.approx(expected.value)
        assert summary['rank_recovery_degenerate'] == expected.degenerate

    def test_smoke_run_has_no_recovery(self, tmp_path):
        """Test a task without planted ranks records a null rank recovery"""
        out = tmp_path / 'run'
        path = write_config(tmp_path, task={'kind': 'smoke', 'n_examples': 60},
                            model={'vocab_size': 64, 'max_seq_len': 12})
        assert main(['run', '--config', path, '--out', str(out)]) == 0
        summary = json.loads((out / SUMMARY_FILE).read_text())
        assert summary['rank_recovery'] is None

    def test_budget_mismatch_exits_2(self, tmp_path, capsys):
        """Test r_init inconsistent with r_target exits 2 naming alloc.r_init"""
        path = write_config(tmp_path, alloc={'r_target': 20})
        assert main(['run', '--config', path, '--out', str(tmp_path / 'run')]) == 2
        assert 'alloc.r_init' in capsys.readouterr().err
        assert not (tmp_path / 'run').exists()

    def test_missing_config_exits_2(self, tmp_path):
        """Test an unreadable config file exits 2"""
        assert main(['run', '--config', str(tmp_path / 'absent.json')]) == 2

    def test_bad_json_exits_2(self, tmp_path):
        """Test a config that is not JSON exits 2"""
        path = tmp_path / 'config.json'
        path.write_text('{"model": ')
        assert main(['run', '--config', str(path)]) == 2

    def test_missing_task_file_exits_2(self, tmp_path):
        """Test a file task pointing nowhere exits 2"""
        path = write_config(tmp_path, task={'kind': 'file', 'path': str(tmp_path / 'none.jsonl')})
        assert main(['run', '--config', path, '--out', str(tmp_path / 'run')]) == 2

    def test_unknown_argument_exits_2(self):
        """Test argparse failures map to exit code 2"""
        assert main(['run']) == 2
        assert main(['frobnicate']) == 2

    def test_rerun_is_byte_identical(self, tmp_path):
        """Test two runs with one seed write identical allocation and history files"""
        path = write_config(tmp_path)
        assert main(['run', '--config', path, '--out', str(tmp_path / 'a'), '--seed', '5']) == 0
        assert main(['run', '--config', path, '--out', str(tmp_path / 'b'), '--seed', '5']) == 0
        for name in (ALLOCATION_FILE, PLAN_HISTORY_FILE):
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


class TestMergeCommand:
    """Folding adapters into dense weights"""

    def test_merged_checkpoint_matches_adapter_form(self, tmp_path):
        """Test the merged checkpoint has no adapter tensors and the same dev loss"""
        config_path = write_config(tmp_path)
        out = tmp_path / 'run'
        assert main(['run', '--config', config_path, '--out', str(out)]) == 0
        merged_path = str(tmp_path / 'merged.alora')
        assert main(['merge', str(out / CHECKPOINT_FILE), '--out', merged_path]) == 0

        codec = CheckpointCodec()
        merged_tensors, metadata = codec.load(merged_path)
        adapter_tensors, _ = codec.load(str(out / CHECKPOINT_FILE))
        assert not [name for name in merged_tensors if name.startswith('adapter.')]
        assert metadata['form'] == 'merged'

        model = ModelConfig.from_dict(metadata['model'])
        cfg = RunConfig.from_dict(json.loads(open(config_path).read()))
        _, splits, _ = ExperimentRunner(cfg).build()
        merged = SuperNetwork.from_tensors(model, merged_tensors)
        adapted = SuperNetwork.from_tensors(model, adapter_tensors)
        assert dev_loss(merged, splits.dev) == pytest.approx(dev_loss(adapted, splits.dev), abs=1e-9)
        assert merged.frozen_checksum() != adapted.frozen_checksum()

    def test_missing_checkpoint_exits_2(self, tmp_path):
        """Test merging a missing checkpoint exits 2"""
        assert main(['merge', str(tmp_path / 'none.alora'), '--out', str(tmp_path / 'm.alora')]) == 2

    def test_checkpoint_without_model_exits_2(self, tmp_path):
        """Test a checkpoint lacking the model config exits 2"""
        path = str(tmp_path / 'bare.alora')
        CheckpointCodec().save(path, {'head.b': np.zeros((1, 2))})
        assert main(['merge', path, '--out', str(tmp_path / 'm.alora')]) == 2

    def test_probe_batch_is_full_length(self):
        """Test probe sequences use the whole context window"""
        batch = probe_batch(ModelConfig(max_seq_len=6, vocab_size=16), seed=0, size=4)
        assert len(batch) == 4
        assert batch.max_length == 6


class TestReportCommand:
    """Allocation reports"""

    def setup_method(self):
        """Set up test fixtures"""
        self.allocation = pd.DataFrame([
            {'layer': 0, 'module': 'up', 'final_rank': 3},
            {'layer': 0, 'module': 'query', 'final_rank': 1},
            {'layer': 1, 'module': 'query', 'final_rank': 4},
            {'layer': 1, 'module': 'up', 'final_rank': 0},
        ])

    def test_pivot_orders_modules_and_totals(self):
        """Test the pivot follows module order and adds totals"""
        pivot = allocation_pivot(self.allocation)
        assert list(pivot.columns) == ['query', 'up', 'total']
        assert pivot.loc[0, 'total'] == 4
        assert pivot.loc['total', 'query'] == 5
        assert pivot.loc['total', 'total'] == 8

    def test_report_writes_heatmap_csv(self, tmp_path, capsys):
        """Test report exits 0 and writes exactly the layer, module and final_rank columns"""
        out = tmp_path / 'run'
        assert main(['run', '--config', write_config(tmp_path), '--out', str(out)]) == 0
        capsys.readouterr()
        assert main(['report', str(out), '--out', str(tmp_path / 'report')]) == 0
        printed = capsys.readouterr().out
        assert 'round  1' in printed and 'round  2' in printed
        report = pd.read_csv(tmp_path / 'report' / 'report_allocation.csv')
        assert list(report.columns) == ['layer', 'module', 'final_rank']
        assert report['final_rank'].sum() == json.loads((out / SUMMARY_FILE).read_text())['budget']['total']

    def test_zero_rounds_is_uniform(self, tmp_path):
        """Test a run without allocation rounds reports r_init on every module"""
        out = tmp_path / 'run'
        path = write_config(tmp_path, alloc={'n_rounds': 0})
        assert main(['run', '--config', path, '--out', str(out)]) == 0
        assert main(['report', str(out)]) == 0
        report = pd.read_csv(out / 'report_allocation.csv')
        assert set(report['final_rank']) == {2}
        assert len(report) == 7

    def test_missing_artifacts_exit_2(self, tmp_path):
        """Test reporting on an empty directory exits 2"""
        assert main(['report', str(tmp_path)]) == 2

    def test_inconsistent_summary_exits_3(self, tmp_path):
        """Test a summary total that disagrees with the allocation exits 3"""
        out = tmp_path / 'run'
        assert main(['run', '--config', write_config(tmp_path), '--out', str(out)]) == 0
        summary = json.loads((out / SUMMARY_FILE).read_text())
        summary['budget']['total'] += 1
        (out / SUMMARY_FILE).write_text(json.dumps(summary))
        assert main(['report', str(out)]) == 3

    def test_tampered_importance_table_exits_3(self, tmp_path):
        """Test a prune set that is not the lowest scored in its table exits 3"""
        out = tmp_path / 'run'
        assert main(['run', '--config', write_config(tmp_path), '--out', str(out)]) == 0
        assert main(['report', str(out)]) == 0
        history = json.loads((out / PLAN_HISTORY_FILE).read_text())
        layer, module, index = history[0]['prune_set'][0]
        scores = pd.read_csv(out / importance_file(1))
        hit = (scores['layer'] == layer) & (scores['module'] == module) & (scores['rank_index'] == index)
        scores.loc[hit, 'score'] = 1e9
        scores.to_csv(out / importance_file(1), index=False)
        assert main(['report', str(out)]) == 3


class TestCompareAndSweep:
    """Multi-run experiment commands"""

    def test_single_scorer_exits_2(self, tmp_path):
        """Test compare with one scorer is an argument error"""
        assert main(['compare', '--config', write_config(tmp_path), '--scorers', 'ablora']) == 2

    def test_unknown_scorer_exits_2(self, tmp_path):
        """Test compare with an unregistered scorer exits 2"""
        assert main(['compare', '--config', write_config(tmp_path), '--scorers', 'ablora,magnitude']) == 2

    def test_compare_rows(self, tmp_path):
        """Test compare writes one row per scorer and seed"""
        out = tmp_path / 'compare'
        assert main(['compare', '--config', write_config(tmp_path), '--scorers', 'ablora,sensitivity',
                     '--seeds', '0,1', '--out', str(out)]) == 0
        rows = pd.read_csv(out / 'compare.csv')
        assert list(rows.columns) == ['scorer', 'seed', 'final_dev_loss', 'rank_recovery']
        assert len(rows) == 4
        assert set(rows['scorer']) == {'ablora', 'sensitivity'}
        assert rows['rank_recovery'].between(0, 1).all()

    def test_sweep_rows(self, tmp_path):
        """Test sweep writes one row per budget and seed with the active totals"""
        out = tmp_path / 'sweep'
        assert main(['sweep', '--config', write_config(tmp_path), '--out', str(out)]) == 0
        rows = pd.read_csv(out / 'sweep.csv')
        assert list(rows['budget_multiplier']) == [1, 2]
        assert (rows['active_ranks_total'] <= rows['budget_multiplier'] * 7).all()

    def test_sweep_budget_too_small_exits_2(self, tmp_path):
        """Test a budget below n_per_round exits 2"""
        path = write_config(tmp_path, alloc={'n_per_round': 10})
        assert main(['sweep', '--config', path, '--budgets', '1', '--out', str(tmp_path / 's')]) == 2


DESK_CONFIG = {
    'alloc': {'r_init': 8, 'n_per_round': 14, 'n_rounds': 4, 'k1_epochs': 1.0, 'k2_epochs': 0.25},
    'train': {'max_epochs': 4.0},
    'task': {'kind': 'teacher', 'true_ranks': {'query': 6}, 'default_rank': 1},
}


@pytest.mark.slow
class TestDirectionalExperiments:
    """Desk-scale experiments; run with -m slow"""

    def outcome(self, seed, raw=None, scorer='ablora'):
        cfg = RunConfig.from_dict(raw or DESK_CONFIG).with_overrides(seed=seed, scorer=scorer)
        return cfg, ExperimentRunner(cfg).run(write=False)

    def test_rank_recovery_beats_uniform(self):
        """Test recovery exceeds 0.5 on at least four of five seeds"""
        wins = 0
        for seed in range(5):
            _, outcome = self.outcome(seed)
            assert outcome.result.net.cfg.n_layers == 2
            wins += outcome.recovery.value > 0.5
        assert wins >= 4

    def test_ablation_scorer_not_worse_than_variants(self):
        """Test median dev loss of ablation scoring is at most the other scorers' medians"""
        losses = {scorer: np.median([self.outcome(seed, scorer=scorer)[1].result.final_dev_loss
                                     for seed in range(5)])
                  for scorer in ('ablora', 'dnas', 'sensitivity')}
        assert losses['ablora'] <= losses['dnas']
        assert losses['ablora'] <= losses['sensitivity']

    def test_larger_budgets_do_not_hurt(self):
        """Test median dev loss is non-increasing across budgets 1, 2, 4 and 8"""
        medians = []
        for multiplier in (1, 2, 4, 8):
            raw = json.loads(json.dumps(DESK_CONFIG))
            raw['alloc']['r_init'] = multiplier
            raw['alloc']['n_per_round'] = max(2, 14 * multiplier // 8)
            medians.append(np.median([self.outcome(seed, raw)[1].result.final_dev_loss
                                      for seed in range(3)]))
        assert all(later <= earlier for earlier, later in zip(medians, medians[1:]))


if __name__ == '__main__':
    pytest.main(['-v', __file__])
