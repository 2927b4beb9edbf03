"""Radar + keypoint stream fusion for whole-body gesture recognition."""

__version__ = "0.1.0"
