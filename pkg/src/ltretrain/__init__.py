"""Classifier retraining for long-tailed recognition on frozen features."""

__version__ = "0.1.0"
