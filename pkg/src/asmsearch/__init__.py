"""Randomized search for fast straight-line x86-64 code from a small SSA IR,
with a symbolic equivalence checker guarding every result."""
__version__ = "0.1.0"
