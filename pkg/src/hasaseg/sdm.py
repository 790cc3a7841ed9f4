"""Signed distance maps and the clipped-sigmoid soft boundary."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volumes import LabelVolume, Volume3D


@dataclass(frozen=True)
class SdmSpec:
    band: float = 10.0
    steepness: float = 1.0
    mode: str = "2d"  # "3d" runs the transform on the whole volume at once

    def __post_init__(self):
        if self.band <= 0 or self.steepness <= 0:
            raise ValueError("band and steepness must be > 0")
        if self.mode not in ("2d", "3d"):
            raise ValueError(f"unknown sdm mode {self.mode!r}")


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face-adjacent background voxel.

    Voxels outside the array are not background.
    """
    mask = np.asarray(mask, dtype=bool)
    cross = ndimage.generate_binary_structure(mask.ndim, 1)
    interior = ndimage.binary_erosion(mask, structure=cross, border_value=1)
    return mask & ~interior


def signed_distance(mask: np.ndarray, band: float = 10.0) -> np.ndarray:
    """Exact Euclidean distance to the nearest boundary voxel, positive inside.

    Works for 2D or 3D masks. Masks without any boundary (empty or full) get a
    constant ``-band`` / ``+band``.
    """
    mask = np.asarray(mask, dtype=bool)
    edge = boundary(mask)
    if not edge.any():
        fill = band if mask.any() else -band
        return np.full(mask.shape, fill, dtype=np.float64)
    # for outside voxels the nearest foreground voxel is always a boundary voxel
    dist = ndimage.distance_transform_edt(~edge)
    return np.where(mask, dist, -dist)


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def soft_boundary(mask: np.ndarray, spec: SdmSpec = SdmSpec()) -> np.ndarray:
    d = np.clip(signed_distance(mask, spec.band), -spec.band, spec.band)
    return logistic(spec.steepness * d)


def sdm_volume(guess: LabelVolume, spec: SdmSpec = SdmSpec()) -> Volume3D:
    mask = guess.data.astype(bool)
    if spec.mode == "3d":
        out = soft_boundary(mask, spec)
    else:
        out = np.stack([soft_boundary(mask[:, :, z], spec) for z in range(mask.shape[2])], axis=2)
    return Volume3D(out.astype(np.float32), guess.spacing, affine=guess.affine)
