"""Tails of randomly stopped sums and executable lower-limit constructions."""

__version__ = "0.1.0"
