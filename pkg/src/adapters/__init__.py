"""Adapters implementing ports (config, files, metrics, logging, signals, CLI)."""
