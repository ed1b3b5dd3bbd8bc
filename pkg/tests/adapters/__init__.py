"""Tests for adapter layer."""
