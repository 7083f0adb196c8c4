"""
Field snapshot container.

A snapshot is an uncompressed ``.npz`` archive holding the format tag, the
grid parameters, the optional time stamp and the values in flat C order.
Round trips are bit-exact.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from nls_decay_lab.exceptions import ValidationError
from nls_decay_lab.grid import ComplexField, make_grid
from nls_decay_lab.utils import atomic_write


logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "nls-field/1"


def save_field(path: Union[str, Path], f: ComplexField) -> Path:
    """
    Write a field snapshot atomically.

    Args:
        path: Destination file (conventionally ``*.npz``).
        f: Field to store.

    Returns:
        Path: The destination path.
    """
    has_time = f.time_stamp is not None

    def _write(tmp: str) -> None:
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                format=np.array(SNAPSHOT_FORMAT),
                dimension=np.int64(f.grid.dimension),
                half_width=np.float64(f.grid.half_width),
                points_per_axis=np.int64(f.grid.points_per_axis),
                has_time=np.bool_(has_time),
                time_stamp=np.float64(f.time_stamp if has_time else 0.0),
                values=f.flat,
            )

    return atomic_write(path, _write)


def load_field(path: Union[str, Path]) -> ComplexField:
    """
    Read a field snapshot.

    Raises:
        ValidationError: If the archive is not a snapshot of a known version.
    """
    with np.load(path, allow_pickle=False) as archive:
        tag = str(archive["format"]) if "format" in archive.files else ""
        if tag != SNAPSHOT_FORMAT:
            raise ValidationError(f"{path}: unsupported snapshot format '{tag}'")
        grid = make_grid(
            int(archive["dimension"]),
            float(archive["half_width"]),
            int(archive["points_per_axis"]),
        )
        time_stamp = float(archive["time_stamp"]) if bool(archive["has_time"]) else None
        values = archive["values"]
    return ComplexField(grid, values, time_stamp)


__all__ = ["SNAPSHOT_FORMAT", "save_field", "load_field"]
