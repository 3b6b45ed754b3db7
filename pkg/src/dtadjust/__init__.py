"""Regression-adjusted distributional treatment effects."""
