"""Quantization-aware training with proximal quantizers."""

from . import diagnostics, gcg, optimizers, problems, quantizers, schedules

__version__ = "0.1.0"

__all__ = ["diagnostics", "gcg", "optimizers", "problems", "quantizers", "schedules"]
