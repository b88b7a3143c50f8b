"""Detect and predict systemic flakiness: clusters of co-failing flaky tests."""

__version__ = "0.1.0"
