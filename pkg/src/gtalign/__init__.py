"""Graph-text alignment encoder with a frozen decoder, built on a small numpy autodiff engine."""

__version__ = "0.1.0"
