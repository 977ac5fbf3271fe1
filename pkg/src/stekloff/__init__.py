"""Edge-element computation of modified Maxwell Stekloff eigenvalues."""

__version__ = "0.1.0"
