"""Network-analytics benchmark for illicit-transaction node classification."""

__version__ = "0.1.0"
