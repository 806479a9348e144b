"""Test package for bisift."""
