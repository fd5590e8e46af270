"""Network-slice admission simulator with a trainable neural admission policy."""

__version__ = "0.1.0"
