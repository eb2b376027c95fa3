"""Maze registry: loads mazes/registry.yaml and builds environments from it."""

from pathlib import Path

import yaml

from hifql.maze import MazeEnv

# Walk up from this file: src/hifql/maze_registry.py -> project root
_PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
MAZES_DIR = _PROJECT_ROOT / "mazes"
REGISTRY_PATH = MAZES_DIR / "registry.yaml"

_ENV_KEYS = ("cell_size", "max_step", "epsilon")


def load_registry(path=None):
    """Parse mazes/registry.yaml and return the full config dict."""
    with open(path or REGISTRY_PATH) as f:
        return yaml.safe_load(f)


def list_mazes():
    """Return a list of (name, config) tuples, defaults merged in."""
    registry = load_registry()
    defaults = registry.get("defaults") or {}
    mazes = registry.get("mazes") or {}
    return [(name, {**defaults, **cfg}) for name, cfg in mazes.items()]


def get_maze(name):
    """Return the merged config dict for a single maze, or None."""
    for maze_name, cfg in list_mazes():
        if maze_name == name:
            return cfg
    return None


def subgoal_k(name):
    """Default subgoal horizon k for a maze."""
    cfg = get_maze(name)
    if cfg is None:
        raise ValueError(f"Maze '{name}' not found in registry")
    return int(cfg["subgoal_k"])


def make_env(name, d_pad=0):
    """Build a MazeEnv for a registered maze."""
    cfg = get_maze(name)
    if cfg is None:
        raise ValueError(f"Maze '{name}' not found in registry")
    kwargs = {k: float(cfg[k]) for k in _ENV_KEYS if k in cfg}
    return MazeEnv(cfg["layout"], d_pad=d_pad, name=name, **kwargs)
