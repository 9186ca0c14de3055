"""Finite-stage construction of rational maps with wandering compacta."""
__version__ = "0.1.0"
