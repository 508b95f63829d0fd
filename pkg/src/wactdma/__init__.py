"""Deterministic WAC-model simulator with a self-stabilizing TDMA slot-assignment protocol."""

__version__ = "0.1.0"
