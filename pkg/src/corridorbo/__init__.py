"""Cellular network simulator for ground users and UAV corridors, with Bayesian optimizers for antenna tilt and beamwidth."""
from ._backend import NAME as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
