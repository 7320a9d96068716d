"""Readout simulation and classification for trapped-ion qubit registers."""

__version__ = "0.1.0"
