"""Nonlocal Cahn-Hilliard-Navier-Stokes in two dimensions: simulator and audits."""

__version__ = "0.1.0"
