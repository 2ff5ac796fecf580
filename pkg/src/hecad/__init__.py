"""Adaptive anomaly-detection model selection over a simulated IoT/edge/cloud hierarchy."""

__version__ = "0.1.0"
