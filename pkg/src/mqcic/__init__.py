"""Medical quality-control indicator calculation."""

__version__ = "0.1.0"
