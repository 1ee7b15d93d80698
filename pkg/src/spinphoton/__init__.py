"""Spin-photon interface simulation: back-action, tomography and fitting."""

__version__ = "0.1.0"
