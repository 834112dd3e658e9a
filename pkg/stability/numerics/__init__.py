"""Numerical kernels: pure functions of arrays, no Django imports."""
