"""Multi-source conditional generative modelling: bounds, brackets and simulations."""

__version__ = "0.1.0"
