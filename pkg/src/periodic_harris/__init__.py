"""Simulation and verification toolkit for degenerate diffusions with
time-periodic drift, specialised to stochastic Hodgkin-Huxley models."""

__version__ = "0.1.0"
