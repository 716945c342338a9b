"""
ALoRA desk lab.
Adaptive rank allocation for low-rank adapters on a small numpy transformer.
"""

__version__ = '1.0.0'
