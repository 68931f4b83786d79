"""Budget-bounded configuration tuning for software systems."""

__version__ = "0.1.0"
