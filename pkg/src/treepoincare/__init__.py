"""Poincaré-exponent toolkit for free groups."""
