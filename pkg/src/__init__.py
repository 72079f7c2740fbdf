"""Model-free massive-MIMO channel estimation workbench."""

__version__ = "0.3.0"
