"""Negative gradient flow of the L2 norm of curvature on SO(4)-invariant metrics of S^4."""

__version__ = "0.1.0"
