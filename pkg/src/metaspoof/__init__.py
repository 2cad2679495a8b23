"""Presentation-attack simulation and security evaluation for score-level biometric fusion."""

__version__ = "0.1.0"
