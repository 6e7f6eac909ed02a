"""Simulation and source reconstruction for a stochastic time-fractional
diffusion equation on the unit disk."""

__version__ = "0.1.0"
