"""Lifelong 3D point-cloud classification engine.

Factorizes each pointwise (1x1) convolution kernel of a PointNet-style
backbone into a shared cross-task knowledge base plus small per-task
factors, and soft-transfers knowledge across a task sequence through a
memory attention mechanism.  Ships baselines (independent per-task
training, plain fine-tuning), the evaluation metrics, parameter
accounting, and a CLI experiment runner.
"""

from .backbone import BackboneConfig
from .factorization import FactorSpec, KnowledgeBase, TaskFactors
from .mam import MamConfig
from .trainer import ExperimentConfig, run_sequence

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "ExperimentConfig",
    "FactorSpec",
    "KnowledgeBase",
    "MamConfig",
    "TaskFactors",
    "run_sequence",
    "__version__",
]
