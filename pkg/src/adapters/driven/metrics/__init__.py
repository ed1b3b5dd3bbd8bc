"""Metrics collection adapters."""
