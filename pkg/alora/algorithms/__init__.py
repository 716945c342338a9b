"""
Algorithms package for rank importance scoring.
Exposes the ablation scorer and the two variant scorers used by the allocator.
"""

from .ablation_scorer import AblationScorer, ab_lora_score
from .dnas_scorer import DnasScorer, dnas_score
from .sensitivity_scorer import SensitivityScorer, sensitivity_score

__all__ = ['AblationScorer', 'ab_lora_score', 'DnasScorer', 'dnas_score',
           'SensitivityScorer', 'sensitivity_score']
