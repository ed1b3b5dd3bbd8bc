"""Tests for driven adapters (config, files, metrics, logging)."""
