"""Transmission-threshold optimization for event-driven IIoT alarm networks."""

__all__ = ["__version__"]
__version__ = "0.1.0"
