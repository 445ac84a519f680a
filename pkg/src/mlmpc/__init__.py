"""Model-predictive control with a learned network versus the plant itself."""

__version__ = "0.1.0"
