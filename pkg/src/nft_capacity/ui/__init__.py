"""Console tables for nft-capacity results."""

__all__: list[str] = []
