"""Core domain logic (solvers, consistency conditions, kernels and experiments)."""
