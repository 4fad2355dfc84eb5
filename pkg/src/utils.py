"""
Utility functions for path handling, seeding and JSON artifacts.
"""

import json
import logging
import zlib
from pathlib import Path

import numpy as np

from src.errors import ConfigError


def ensure_dir(path) -> Path:
    """Return `path` as a Path, creating the directory if it doesn't exist.

    Raises:
        ConfigError: If the directory cannot be created
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Output directory {path} is not writable: {e}")
    return path


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed, *keys) -> np.random.Generator:
    """Derive an independent generator from the root seed and a purpose key.

    The same (seed, keys) always gives the same stream, and different keys
    give statistically independent streams.

    Args:
        seed (int): Root seed of the run
        *keys: Purpose labels, e.g. ("split", 0) or ("dropout", epoch)

    Returns:
        np.random.Generator
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))


def write_json(data, path) -> str:
    """Write `data` as indented JSON, creating parent directories."""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    logging.info(f"Wrote {path}")
    return str(path)


def read_json(path):
    """Read a JSON document."""
    with open(path) as f:
        return json.load(f)


def to_jsonable(value):
    """Convert numpy containers and scalars into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value
