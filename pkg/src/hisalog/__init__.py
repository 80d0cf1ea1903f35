"""Deductive query engine over hash-indexed sorted arrays."""
