"""Projection-free TD(0) with linear function approximation under Markovian sampling."""
from tdforge.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
