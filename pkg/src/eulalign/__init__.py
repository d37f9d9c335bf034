"""Damped Euler-alignment particles, their large-friction limit, and error functionals."""
__version__ = "0.1.0"
