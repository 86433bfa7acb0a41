"""Steady states, bifurcation diagrams and linear stability for the Bratu and
viscous Burgers equations, by finite differences and small collocation
networks trained with Levenberg-Marquardt."""

from .errors import BranchTraceError

__version__ = "0.1.0"

__all__ = ["BranchTraceError", "__version__"]
