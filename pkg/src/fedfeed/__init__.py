"""Federated learning with noisy user feedback"""

__version__ = "0.1.0"
