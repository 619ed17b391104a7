"""Small numerical helpers shared by the flow and field modules."""
from __future__ import annotations

import numpy as np
from scipy import ndimage


def infill_nearest(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace invalid cells by the value of the nearest valid cell."""
    if mask.all():
        return np.array(values, dtype=np.float64, copy=True)
    if not mask.any():
        return np.zeros_like(values, dtype=np.float64)
    _, (iy, ix) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return np.asarray(values, dtype=np.float64)[iy, ix]


def mirror_extend(a: np.ndarray) -> np.ndarray:
    """Half-sample reflection to twice each dimension; periodic after."""
    h, w = a.shape
    return np.pad(a, ((0, h), (0, w)), mode="symmetric")


def angular_wavenumbers(shape: tuple[int, int]):
    """Radians-per-pixel wavenumbers (ky, kx) for an rfft2 of ``shape``."""
    ky = 2 * np.pi * np.fft.fftfreq(shape[0])
    kx = 2 * np.pi * np.fft.rfftfreq(shape[1])
    return ky[:, None], kx[None, :]
