"""Covariance-intersection distributed Kalman filtering over time-varying directed graphs."""

from .errors import CIDKFError, ConvergenceError, ModelError, NumericalError

__version__ = "0.1.0"

__all__ = ["CIDKFError", "ConvergenceError", "ModelError", "NumericalError", "__version__"]
