"""Rotating waves of a Lambda-Omega lattice dynamical system with quarter-turn symmetry."""

__version__ = "0.1.0"
