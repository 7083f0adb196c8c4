"""
Utility helper functions for NLS Decay Lab.

This module provides logging setup, atomic file writes, canonical hashing of
configuration dictionaries and small dictionary/statistics helpers shared by
the runner and the diagnostics.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from nls_decay_lab.config import LoggingConfig


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def configure_logging(settings: Optional[LoggingConfig] = None) -> None:
    """
    Configure the package root logger.

    Installs a stream handler, plus a rotating file handler when a log file
    is configured. Safe to call more than once.

    Args:
        settings: Logging section of the configuration; defaults are read
            from the environment when omitted.
    """
    settings = settings or LoggingConfig()
    root = logging.getLogger("nls_decay_lab")
    root.setLevel(settings.level.upper())
    formatter = logging.Formatter(settings.format)

    for handler in list(root.handlers):
        root.removeHandler(handler)

    stream = logging.StreamHandler()
    stream.setFormatter(formatter)
    root.addHandler(stream)

    if settings.log_file:
        os.makedirs(settings.log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            os.path.join(settings.log_dir, settings.log_file),
            maxBytes=settings.max_file_size,
            backupCount=settings.backup_count,
        )
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


def atomic_write(path: PathLike, writer: Callable[[str], None], suffix: str = "") -> Path:
    """
    Write a file atomically: write to a temporary sibling, then rename.

    Args:
        path: Destination path.
        writer: Callable receiving the temporary path and writing the content.
        suffix: Suffix for the temporary file (some writers key on it).

    Returns:
        Path: The destination path.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=suffix, dir=target.parent)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return target


def to_jsonable(value: Any) -> Any:
    """
    Convert numpy scalars/arrays and non-finite floats into JSON-safe values.

    NaN and infinities become None.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def dump_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    """Write a JSON document atomically with sorted keys."""
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True)

    def _write(tmp: str) -> None:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")

    return atomic_write(path, _write)


def load_json(path: PathLike) -> Dict[str, Any]:
    """Read a JSON document."""
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def config_hash(payload: Dict[str, Any]) -> str:
    """
    Hash a configuration dictionary canonically.

    Args:
        payload: JSON-serialisable dictionary.

    Returns:
        str: Hex SHA-256 of the sorted-key JSON encoding.
    """
    canonical = json.dumps(to_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def merge_dictionaries(*dicts: Dict[str, Any]) -> Dict[str, Any]:
    """
    Merge multiple dictionaries recursively.

    Later dictionaries take precedence in case of key conflicts; nested
    dictionaries are merged rather than replaced.

    Args:
        *dicts: Variable number of dictionaries to merge

    Returns:
        Dict[str, Any]: Merged dictionary
    """
    result: Dict[str, Any] = {}
    for d in dicts:
        if not isinstance(d, dict):
            continue
        for key, value in d.items():
            if isinstance(value, dict) and isinstance(result.get(key), dict):
                result[key] = merge_dictionaries(result[key], value)
            else:
                result[key] = value
    return result


def calculate_statistics(values: List[float]) -> Dict[str, float]:
    """
    Calculate basic statistics for a list of numeric values.

    Args:
        values: List of numeric values

    Returns:
        Dict[str, float]: Dictionary containing mean, min, max and count

    Raises:
        ValueError: If values list is empty
    """
    if not values:
        raise ValueError("Cannot calculate statistics for empty list")

    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()),
        "min": float(arr.min()),
        "max": float(arr.max()),
        "count": int(arr.size),
    }


__all__ = [
    "configure_logging",
    "atomic_write",
    "to_jsonable",
    "dump_json",
    "load_json",
    "config_hash",
    "merge_dictionaries",
    "calculate_statistics",
]
