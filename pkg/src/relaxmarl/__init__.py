"""Discrete gradient estimators, an exact-gradient oracle and a MADDPG trainer."""

from .estimators import KINDS, EstimatorConfig, make_estimator
from .oracle import estimator_stats, exact_gradient

__version__ = "0.1.0"
__all__ = ["KINDS", "EstimatorConfig", "make_estimator", "estimator_stats", "exact_gradient"]
