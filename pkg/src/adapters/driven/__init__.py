"""Driven adapters (called by the core)."""
