"""Figure regeneration for the swimmer experiment CSVs."""

__version__ = "0.1.0"
