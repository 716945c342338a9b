import numbers
from dataclasses import fields
from typing import Any, Dict, List, Tuple

from alora.models.config import (SCORERS, TASK_KINDS, AllocationConfig, ModelConfig,
                                 TaskConfig, TrainConfig)
from alora.models.module_id import ModuleId, ModuleKind

FieldError = Tuple[str, str]


def _field_names(record) -> set:
    return {f.name for f in fields(record)}


class ConfigValidator:
    """Schema and cross-field checks for a raw JSON run config"""

    TOP_LEVEL = {'model', 'train', 'alloc', 'task', 'scorer', 'out_dir', 'seed',
                 'seeds', 'budget_multipliers'}

    def validate(self, raw: Any) -> Tuple[bool, List[FieldError]]:
        """
        Validate a raw config mapping.

        Returns:
            (is_valid, errors) where each error is (dotted field path, message)
        """
        errors: List[FieldError] = []
        if not isinstance(raw, dict):
            return False, [('', 'config must be a JSON object')]

        for key in sorted(set(raw) - self.TOP_LEVEL):
            errors.append((key, 'unknown field'))

        sections = {'model': ModelConfig, 'train': TrainConfig,
                    'alloc': AllocationConfig, 'task': TaskConfig}
        for name, record in sections.items():
            section = raw.get(name, {})
            if not isinstance(section, dict):
                errors.append((name, 'must be an object'))
                continue
            for key in sorted(set(section) - _field_names(record)):
                errors.append((f"{name}.{key}", 'unknown field'))

        if errors:
            return False, errors

        errors.extend(self._validate_model(raw.get('model', {})))
        errors.extend(self._validate_train(raw.get('train', {})))
        if not errors:
            # both need a well-formed model section
            errors.extend(self._validate_alloc(raw))
            errors.extend(self._validate_task(raw))
        errors.extend(self._validate_top_level(raw))

        return len(errors) == 0, errors

    def _validate_model(self, section: Dict) -> List[FieldError]:
        errors = []
        model = {**ModelConfig().to_dict(), **section}
        for key, value in model.items():
            if not _is_int(value) or value < 1:
                errors.append((f"model.{key}", 'must be a positive integer'))
        if errors:
            return errors
        if model['d'] % model['n_heads'] != 0:
            errors.append(('model.n_heads', f"must divide d = {model['d']}"))
        if model['d_ff'] <= model['d']:
            errors.append(('model.d_ff', 'must be larger than d'))
        if model['n_classes'] < 2:
            errors.append(('model.n_classes', 'needs at least 2 classes'))
        return errors

    def _validate_train(self, section: Dict) -> List[FieldError]:
        errors = []
        train = {**TrainConfig().to_dict(), **section}
        if not _is_number(train['lr_peak']) or train['lr_peak'] <= 0:
            errors.append(('train.lr_peak', 'must be positive'))
        if not _is_number(train['warmup_frac']) or not 0 < train['warmup_frac'] < 1:
            errors.append(('train.warmup_frac', 'must lie strictly between 0 and 1'))
        if not _is_number(train['max_epochs']) or train['max_epochs'] < 0:
            errors.append(('train.max_epochs', 'must be non-negative'))
        if not _is_number(train['weight_decay']) or train['weight_decay'] < 0:
            errors.append(('train.weight_decay', 'must be non-negative'))
        for key in ('batch_size', 'eval_every_steps', 'patience'):
            if not _is_int(train[key]) or train[key] < 1:
                errors.append((f"train.{key}", 'must be a positive integer'))
        if not _is_int(train['seed']):
            errors.append(('train.seed', 'must be an integer'))
        return errors

    def _validate_alloc(self, raw: Dict) -> List[FieldError]:
        errors = []
        model = ModelConfig.from_dict({**ModelConfig().to_dict(), **raw.get('model', {})})
        section = raw.get('alloc', {})
        alloc = {**AllocationConfig.defaults_for(model, section), **section}

        for key in ('r_target', 'r_init', 'b_val'):
            if not _is_int(alloc[key]) or alloc[key] < 1:
                errors.append((f"alloc.{key}", 'must be a positive integer'))
        for key in ('n_per_round', 'n_rounds'):
            if not _is_int(alloc[key]) or alloc[key] < 0:
                errors.append((f"alloc.{key}", 'must be a non-negative integer'))
        for key in ('k1_epochs', 'k2_epochs', 'init_std', 'dnas_arch_lr'):
            if not _is_number(alloc[key]) or alloc[key] < 0:
                errors.append((f"alloc.{key}", 'must be non-negative'))
        if errors:
            return errors

        if alloc['r_target'] % model.n_modules != 0 or \
                alloc['r_init'] * model.n_modules != alloc['r_target']:
            errors.append(('alloc.r_init',
                           f"r_init * {model.n_modules} modules must equal r_target = {alloc['r_target']}"))
        if alloc['n_per_round'] > alloc['r_target']:
            errors.append(('alloc.n_per_round', 'cannot exceed r_target'))

        train = {**TrainConfig().to_dict(), **raw.get('train', {})}
        needed = alloc['k1_epochs'] + alloc['n_rounds'] * alloc['k2_epochs']
        if train['max_epochs'] < needed:
            errors.append(('train.max_epochs',
                           f"must cover k1_epochs + n_rounds * k2_epochs = {needed:g}"))
        return errors

    def _validate_task(self, raw: Dict) -> List[FieldError]:
        errors = []
        task = {**TaskConfig().to_dict(), **raw.get('task', {})}
        model = {**ModelConfig().to_dict(), **raw.get('model', {})}

        if task['kind'] not in TASK_KINDS:
            errors.append(('task.kind', f"must be one of {', '.join(TASK_KINDS)}"))
        if task['path'] is not None and not isinstance(task['path'], str):
            errors.append(('task.path', 'must be a string path'))
        elif task['kind'] == 'file' and not task['path']:
            errors.append(('task.path', "required when kind is 'file'"))
        if not _is_int(task['n_examples']) or task['n_examples'] < 30:
            errors.append(('task.n_examples', 'needs at least 30 examples'))
        if not _is_number(task['noise']) or not 0 <= task['noise'] < 1:
            errors.append(('task.noise', 'must lie in [0, 1)'))
        if not _is_int(task['seq_len']) or not 1 <= task['seq_len'] <= model.get('max_seq_len', 0):
            errors.append(('task.seq_len', 'must lie in [1, model.max_seq_len]'))
        if not _is_number(task['delta_scale']) or task['delta_scale'] < 0:
            errors.append(('task.delta_scale', 'must be non-negative'))

        true_ranks = task['true_ranks']
        if not isinstance(true_ranks, dict):
            return errors + [('task.true_ranks', 'must be an object')]
        ranks = dict(true_ranks, __default__=task['default_rank'])
        for key, rank in ranks.items():
            path = 'task.default_rank' if key == '__default__' else f"task.true_ranks.{key}"
            if key != '__default__' and not _is_module_key(key, model.get('n_layers', 0)):
                errors.append((path, 'expected "<module>" or "<layer>.<module>"'))
            elif not _is_int(rank) or rank < 0:
                errors.append((path, 'must be a non-negative integer'))
            elif _is_int(model.get('d')) and rank > model['d']:
                errors.append((path, f"rank cannot exceed d = {model['d']}"))
        return errors

    def _validate_top_level(self, raw: Dict) -> List[FieldError]:
        errors = []
        if raw.get('scorer', 'ablora') not in SCORERS:
            errors.append(('scorer', f"must be one of {', '.join(SCORERS)}"))
        if not _is_int(raw.get('seed', 0)):
            errors.append(('seed', 'must be an integer'))
        if not isinstance(raw.get('out_dir', ''), str):
            errors.append(('out_dir', 'must be a string'))
        for key in ('seeds', 'budget_multipliers'):
            values = raw.get(key, [1])
            if not isinstance(values, list) or not values or not all(_is_int(v) for v in values):
                errors.append((key, 'must be a non-empty list of integers'))
        multipliers = raw.get('budget_multipliers', [1])
        if isinstance(multipliers, list) and any(_is_int(m) and m < 1 for m in multipliers):
            errors.append(('budget_multipliers', 'multipliers must be positive'))
        return errors


def _is_int(value) -> bool:
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _is_module_key(key: str, n_layers: int) -> bool:
    """Accept 'query' (every layer) or '1.query' (one layer)"""
    try:
        if '.' in key:
            module_id = ModuleId.from_list(key.split('.', 1))
            return 0 <= module_id.layer < n_layers
        ModuleKind.from_slug(key)
        return True
    except ValueError:
        return False
