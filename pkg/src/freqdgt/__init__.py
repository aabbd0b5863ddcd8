"""Frequency-adaptive dynamic graph transformer for cross-subject EEG emotion recognition."""

__version__ = "0.1.0"
