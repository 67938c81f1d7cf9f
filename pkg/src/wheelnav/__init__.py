"""Wheel-mounted inertial navigation toolkit."""

__version__ = "0.1.0"
