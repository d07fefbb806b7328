"""Access to the game and policy files shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

BUNDLED = ("example1.game", "example2.game", "toy_h2.game",
           "uniform.policy", "example1_mixed.policy")


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled data file (e.g. "example2.game")."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled file {name!r}; available: {', '.join(BUNDLED)}")
    return Path(resources.files("cmgames").joinpath("data", name))
