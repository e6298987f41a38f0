"""nft-capacity command-line package."""

__all__ = ["main"]
