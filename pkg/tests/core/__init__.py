"""Tests for core domain layer."""
