"""Neural attribute machines: grammar-constrained LSTM program generators."""

__version__ = "0.1.0"
