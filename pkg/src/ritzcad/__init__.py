"""Variational neural PDE solver on multi-patch NURBS geometry."""

from .estimator import VariationalSolver

__version__ = "0.1.0"

__all__ = ["VariationalSolver", "__version__"]
