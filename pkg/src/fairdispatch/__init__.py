"""Fairness- and preference-aware ride-hailing dispatch simulator and trainer."""

__version__ = "0.1.0"
