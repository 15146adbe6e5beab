"""Learned association between radar pins and camera bounding boxes."""

__version__ = "0.1.0"
