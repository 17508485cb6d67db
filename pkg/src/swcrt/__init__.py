"""Stepped-wedge cluster randomized trial estimators and estimand weights."""

__version__ = "0.1.0"
