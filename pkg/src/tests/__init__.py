"""Test package for nft-capacity."""
