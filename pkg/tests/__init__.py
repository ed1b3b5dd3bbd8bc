"""Test suite for the group Lasso consistency toolkit."""
