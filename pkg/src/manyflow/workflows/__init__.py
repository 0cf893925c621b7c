"""Example workflows shipped with the package."""

from pathlib import Path

ROOT = Path(__file__).resolve().parent


def path(name: str) -> Path:
    """Directory of the shipped workflow ``name``."""
    p = ROOT / name
    if not p.is_dir():
        raise FileNotFoundError(f"no shipped workflow named {name!r}")
    return p
