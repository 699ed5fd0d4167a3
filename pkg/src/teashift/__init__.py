"""tea-shift: QEEG features, normalization, and Transfer Euclidean Alignment."""

__version__ = "0.1.0"
