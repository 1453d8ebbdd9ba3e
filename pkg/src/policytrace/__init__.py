"""Policy reasoning trace generation and compliance assessment toolkit."""

__version__ = "0.1.0"
