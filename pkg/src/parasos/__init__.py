"""Lyapunov certificates and boundary controllers for 1-D parabolic PDEs."""

__version__ = "0.1.0"
