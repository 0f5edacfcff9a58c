"""Causal stability selection: effect-modifier discovery with expected
false-positive control."""

__version__ = "0.1.0"
