"""Arm pose estimation from a smartwatch and an optional phone."""

__version__ = "0.1.0"
