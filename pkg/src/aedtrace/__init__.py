"""Sensor-log analytics for AED retrieval trips."""

__version__ = "0.1.0"
