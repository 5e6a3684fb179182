"""Test suite for PyFluff."""
