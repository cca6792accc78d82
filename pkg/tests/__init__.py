"""Test package for shadowprice."""
