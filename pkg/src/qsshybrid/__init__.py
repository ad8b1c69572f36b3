"""Long-term power system stability simulation with full, QSS and hybrid models."""

__version__ = "0.1.0"
