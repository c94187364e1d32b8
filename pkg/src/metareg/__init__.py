"""Threshold-classifier metamodel for ordinal-score regression."""

__version__ = "0.1.0"
