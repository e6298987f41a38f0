"""Formatting and serialization helpers."""

__all__: list[str] = []
