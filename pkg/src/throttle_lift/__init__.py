"""Causal effects of ad exposure from budget-throttled auction logs."""
__version__ = "0.1.0"
