"""nft-capacity - Nonlinear Fourier spectral efficiency of the NLSE channel"""

from nft_capacity._version import __version__

__all__ = ["__version__"]
