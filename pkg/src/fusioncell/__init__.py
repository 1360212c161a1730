"""Standard-cell performance prediction from routed layout and netlist topology."""

__version__ = "0.1.0"
