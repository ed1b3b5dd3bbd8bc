"""File readers and result writers."""
