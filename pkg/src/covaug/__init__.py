"""Covariance-preserving adversarial feature augmentation for low-shot learning."""

__version__ = "0.1.0"
