"""Parametric CSI feedback: channel model, quantization, bit allocation,
sensitivity analysis, a small attention estimator and an evaluation harness."""

__version__ = "0.1.0"
