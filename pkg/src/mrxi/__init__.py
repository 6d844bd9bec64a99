"""Magnetorelaxometry imaging: forward modelling and variational reconstruction."""

__version__ = "0.1.0"
