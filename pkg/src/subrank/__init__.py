"""Weakly supervised substitute-product ranking at desk scale.

Pipeline: traffic counts -> engineered labels -> negative augmentation ->
grouped split -> model (boosted trees over pooled word vectors, or a
from-scratch transformer cross-encoder) -> dual evaluation (functionality
AuPRC, buyability NDCG), all runnable against a seeded synthetic
marketplace whose ground truth is known.
"""

__version__ = "0.1.0"
