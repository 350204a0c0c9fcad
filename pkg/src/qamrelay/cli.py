"""Placeholder, replaced as the build proceeds."""
