"""Lane-anchor transformer decoder with one-to-several label assignment, in NumPy."""

__version__ = "0.1.0"
