"""Random symmetric tensors: eigenvalue estimation by power iteration and exact Gaussian moments."""

__version__ = "0.1.0"
