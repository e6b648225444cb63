"""Optimal-transport model distributional robustness (OT-MDR) at desk scale."""

from otmdr.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
