"""Tests for the driving adapters."""
