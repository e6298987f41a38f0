"""Version management utilities.

The version lives in pyproject.toml; installed builds read it back from the
package metadata, source checkouts parse the manifest directly.
"""

import importlib.metadata
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Union


DISTRIBUTION_NAME = "nft-capacity"


def get_version() -> str:
    """Get version from package metadata.

    Returns:
        Version string (e.g., "0.4.0")
    """
    try:
        return importlib.metadata.version(DISTRIBUTION_NAME)
    except importlib.metadata.PackageNotFoundError:
        return _get_version_from_pyproject()


def _get_version_from_pyproject() -> str:
    """Read the version straight from pyproject.toml in a source checkout.

    Returns:
        Version string or "unknown" if it cannot be determined
    """
    try:
        import tomllib
    except ImportError:
        try:
            import tomli as tomllib  # type: ignore[import-untyped,no-redef]
        except ImportError:
            return "unknown"

    root = find_project_root()
    if root is None:
        return "unknown"

    try:
        with open(root / "pyproject.toml", "rb") as f:
            data: Dict[str, Any] = tomllib.load(f)
        project_data: Dict[str, Any] = data.get("project", {})
        version: str = project_data.get("version", "unknown")
        return version
    except Exception:
        return "unknown"


def get_package_info() -> Dict[str, Optional[str]]:
    """Get package name, version and summary.

    Returns:
        Dictionary containing version, name, and metadata
    """
    try:
        metadata = importlib.metadata.metadata(DISTRIBUTION_NAME)
        return {
            "version": get_version(),
            "name": metadata.get("Name"),
            "description": metadata.get("Summary"),
            "license": metadata.get("License"),
        }
    except importlib.metadata.PackageNotFoundError:
        return {
            "version": _get_version_from_pyproject(),
            "name": DISTRIBUTION_NAME,
            "description": None,
            "license": None,
        }


def get_version_info() -> Dict[str, Any]:
    """Get version together with the interpreter and numeric stack versions.

    Returns:
        Dictionary printed by the --version flag
    """
    import numpy
    import scipy

    return {
        "version": get_version(),
        "python_version": sys.version.split()[0],
        "numpy_version": numpy.__version__,
        "scipy_version": scipy.__version__,
        "platform": sys.platform,
        "package_info": get_package_info(),
    }


def find_project_root(start_path: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Find the project root directory containing pyproject.toml.

    Args:
        start_path: Starting directory for search (defaults to this file's location)

    Returns:
        Path to project root or None if not found
    """
    if start_path is None:
        current_dir = Path(__file__).parent
    else:
        current_dir = Path(start_path).resolve()

    for _ in range(10):
        if (current_dir / "pyproject.toml").exists():
            return current_dir

        parent = current_dir.parent
        if parent == current_dir:
            break
        current_dir = parent

    return None


__version__: str = get_version()
