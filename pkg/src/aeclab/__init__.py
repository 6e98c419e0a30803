"""Desk-scale acoustic echo cancellation lab: complex-mask neural AEC, contrastive
pre-training, synthetic data generation, NLMS baseline and evaluation."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
