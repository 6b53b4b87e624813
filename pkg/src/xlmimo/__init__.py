"""Near-field, non-stationary XL-MIMO channel model with cluster coupling."""

__version__ = "0.1.0"
