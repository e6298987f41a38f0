"""Tests for version management."""

import importlib.metadata
from pathlib import Path
from unittest.mock import patch

import pytest

from nft_capacity._version import DISTRIBUTION_NAME
from nft_capacity._version import _get_version_from_pyproject
from nft_capacity._version import find_project_root
from nft_capacity._version import get_package_info
from nft_capacity._version import get_version
from nft_capacity._version import get_version_info


def test_get_version_from_metadata() -> None:
    """Test getting version from package metadata."""
    with patch("importlib.metadata.version") as mock_version:
        mock_version.return_value = "0.4.0"
        assert get_version() == "0.4.0"
        mock_version.assert_called_once_with(DISTRIBUTION_NAME)


def test_get_version_falls_back_to_pyproject() -> None:
    """Test fallback to pyproject.toml when the package is not installed."""
    not_found = importlib.metadata.PackageNotFoundError(DISTRIBUTION_NAME)
    with patch("importlib.metadata.version", side_effect=not_found):
        with patch(
            "nft_capacity._version._get_version_from_pyproject", return_value="9.9.9"
        ):
            assert get_version() == "9.9.9"


def test_pyproject_version_from_tmp_root(tmp_path: Path) -> None:
    (tmp_path / "pyproject.toml").write_text(
        '[project]\nname = "nft-capacity"\nversion = "1.2.3"\n', encoding="utf-8"
    )
    with patch("nft_capacity._version.find_project_root", return_value=tmp_path):
        assert _get_version_from_pyproject() == "1.2.3"


def test_get_version_fallback_unknown() -> None:
    """Test fallback to 'unknown' when no manifest is found."""
    with patch("nft_capacity._version.find_project_root", return_value=None):
        assert _get_version_from_pyproject() == "unknown"


def test_find_project_root(tmp_path: Path) -> None:
    (tmp_path / "pyproject.toml").write_text("", encoding="utf-8")
    nested = tmp_path / "a" / "b"
    nested.mkdir(parents=True)
    assert find_project_root(nested) == tmp_path.resolve()


def test_package_info_without_install() -> None:
    not_found = importlib.metadata.PackageNotFoundError(DISTRIBUTION_NAME)
    with patch("importlib.metadata.metadata", side_effect=not_found):
        info = get_package_info()
    assert info["name"] == DISTRIBUTION_NAME
    assert info["description"] is None


def test_version_info_lists_numeric_stack() -> None:
    info = get_version_info()
    assert {"version", "python_version", "numpy_version", "scipy_version"} <= set(
        info
    )


def test_version_format() -> None:
    """Test that version follows expected format."""
    from nft_capacity import __version__

    if __version__ != "unknown":
        parts = __version__.split(".")
        assert len(parts) >= 2, f"Version should have at least 2 parts: {__version__}"
        assert parts[0].isdigit()
        assert parts[1].isdigit()


def test_version_consistency() -> None:
    """Test that version is consistent across imports."""
    from nft_capacity import __version__ as version1
    from nft_capacity._version import __version__ as version2

    assert version1 == version2


@pytest.mark.integration
def test_version_matches_pyproject() -> None:
    """Integration test: verify version matches pyproject.toml."""
    pyproject_path = Path(__file__).parent.parent.parent / "pyproject.toml"
    if not pyproject_path.exists():
        pytest.skip("not a source checkout")
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib  # type: ignore[no-redef]

    with open(pyproject_path, "rb") as f:
        expected_version = tomllib.load(f)["project"]["version"]

    from nft_capacity import __version__

    if __version__ != "unknown":
        assert __version__ == expected_version
