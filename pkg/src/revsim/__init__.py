"""revsim: virtualized simulation output with on-demand re-simulation."""

__version__ = "0.1.0"
