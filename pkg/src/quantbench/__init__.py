"""Supervised class-prevalence estimation and artificial-prevalence evaluation."""

__version__ = "0.1.0"
