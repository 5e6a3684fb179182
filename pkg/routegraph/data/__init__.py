"""Bundled configuration data."""
