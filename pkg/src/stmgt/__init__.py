"""Spatio-temporal multi-graph Transformer (STMGT) for zone-level demand forecasting."""

__version__ = "0.1.0"
