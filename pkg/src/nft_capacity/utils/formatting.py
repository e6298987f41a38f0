"""Formatting utilities for nft-capacity.

This module provides number formatting for text outputs and the ``#`` header
block written at the top of every CSV file.
"""

import logging
import math
from typing import Iterable, List, Mapping, Optional, Union

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9


def format_number(value: Union[int, float], digits: int = SIGNIFICANT_DIGITS) -> str:
    """Format a real number with a fixed count of significant digits.

    Args:
        value: Number to format
        digits: Significant digits (default: 9)

    Returns:
        Shortest ``g`` representation; ``nan``/``inf`` spelled out
    """
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}g}"


def format_complex(value: complex, digits: int = SIGNIFICANT_DIGITS) -> str:
    """Complex number as ``re im`` pair."""
    return f"{format_number(value.real, digits)} {format_number(value.imag, digits)}"


def format_optional(value: Optional[float]) -> str:
    """Empty cell for missing values."""
    return "" if value is None else format_number(value)


def format_seeds(seeds: Iterable[int]) -> str:
    return ",".join(str(int(s)) for s in seeds)


def header_block(
    version: str,
    config_hash: str,
    seeds: Iterable[int],
    extra: Optional[Mapping[str, object]] = None,
) -> List[str]:
    """Comment lines identifying the tool, configuration and seeds.

    Args:
        version: Package version
        config_hash: Settings.config_hash() of the run
        seeds: Seeds used for the run
        extra: Additional ``key=value`` pairs

    Returns:
        Lines starting with ``#``, without trailing newlines
    """
    lines = [
        f"# nft-capacity {version}",
        f"# config_hash={config_hash}",
        f"# seeds={format_seeds(seeds)}",
    ]
    for key, value in (extra or {}).items():
        if isinstance(value, float):
            value = format_number(value)
        lines.append(f"# {key}={value}")
    return lines


def format_bits(value: Optional[float], decimals: int = 3) -> str:
    """Spectral efficiency for console tables, ``-`` when missing."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{decimals}f}"
