"""Simulation and verification toolkit for matrix-kernel Euler-alignment dynamics."""
from ._backend import NAME as BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
