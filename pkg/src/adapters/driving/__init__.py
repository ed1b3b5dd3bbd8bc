"""Driving adapters (call the core)."""
