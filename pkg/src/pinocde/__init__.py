"""Physics-informed neural operators for coupled second-order dynamic systems."""

__version__ = "0.1.0"
