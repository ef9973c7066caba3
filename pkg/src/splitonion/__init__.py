"""Onion routing with constant-rate flowlets, splittable chaff and replay detection."""

__version__ = "0.1.0"
