"""Energy-observability audit and per-process energy attribution toolkit."""

__version__ = "0.1.0"
