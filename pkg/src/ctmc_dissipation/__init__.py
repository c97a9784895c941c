"""Dissipation, entropy and transport geometry for finite-state Markov chains."""

__version__ = "0.1.0"
