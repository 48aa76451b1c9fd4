"""Fusion planning and stitched-kernel scheduling for memory-intensive tensor graphs."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def fixture_path(name: str) -> Path:
    """Path of a bundled example graph, by stem (``layer_norm``) or file name."""
    fname = name if name.endswith(".graph") else f"{name}.graph"
    path = Path(str(resources.files("stitchplan").joinpath("fixtures", fname)))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled fixture {name!r}")
    return path


def list_fixtures() -> list[str]:
    root = Path(str(resources.files("stitchplan").joinpath("fixtures")))
    return sorted(p.stem for p in root.glob("*.graph"))
