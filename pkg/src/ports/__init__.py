"""Ports (interfaces/DTOs) for hexagonal architecture."""
