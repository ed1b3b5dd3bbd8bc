"""Group Lasso and multiple kernel learning: solvers, consistency conditions and experiments."""
