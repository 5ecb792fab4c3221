"""Inference for the singular subspaces of a low-rank matrix from trace-regression data."""
