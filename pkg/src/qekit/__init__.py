"""Photophysics analysis toolkit for solid-state quantum emitters."""

__version__ = "0.1.0"
