"""Simulation and trace analysis of single-photon interferometer networks."""

__version__ = "0.1.0"
