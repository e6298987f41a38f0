"""Numerical core of nft-capacity.

This package holds the unit normalization, signal generation, lattice
scattering, propagation, noise covariance and spectral-efficiency analysis.
"""

__all__: list[str] = []
