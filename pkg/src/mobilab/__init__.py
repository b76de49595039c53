"""Lifecycle IGE estimation toolkit."""
