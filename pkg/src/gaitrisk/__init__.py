"""Gait-based depression-risk screening at desk scale.

A silhouette walker simulator, a 3D-conv dynamic-feature backbone with
temporal/spatial compression, cross-entropy + identity-triplet training,
and the full evaluation protocol, all on a minimal numpy/numba compute
core with reverse-mode differentiation.
"""

from . import data, evaluation, model, numerics, synthetic, training

__version__ = "0.1.0"

__all__ = ["data", "evaluation", "model", "numerics", "synthetic", "training",
           "__version__"]
