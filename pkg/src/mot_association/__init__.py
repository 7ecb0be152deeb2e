"""Learned data association for online multi-object tracking."""

__version__ = "0.1.0"
