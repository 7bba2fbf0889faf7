"""Immutable domain types: units, laws and results."""
