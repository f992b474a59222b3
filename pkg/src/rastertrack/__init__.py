"""Detector-agnostic multi-target multi-camera tracking on raster maps."""

__version__ = "0.1.0"
