"""Flatness-aware, parameter-constrained multi-objective architecture search."""
