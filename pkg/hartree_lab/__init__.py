"""Numerical lab for pseudo-relativistic Hartree (boson-star) ground states."""

__version__ = "0.1.0"
