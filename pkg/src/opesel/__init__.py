"""Adaptive estimator selection for off-policy evaluation of contextual bandits."""

__version__ = "0.1.0"
