"""Test suite for rankval."""
