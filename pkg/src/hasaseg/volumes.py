"""Volumetric data model, NIfTI I/O, axial slicing and phantom generation."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import nibabel as nib
import numpy as np


def _spacing_tuple(spacing) -> tuple[float, float, float]:
    s = tuple(float(v) for v in spacing)
    if len(s) != 3:
        raise ValueError(f"spacing must have 3 components, got {s}")
    if any(not np.isfinite(v) or v <= 0 for v in s):
        raise ValueError(f"spacing components must be > 0, got {s}")
    return s


@dataclass
class Volume3D:
    """A 3D scalar grid indexed ``[x, y, z]`` with voxel spacing in mm.

    ``affine`` is carried through I/O untouched; only the spacing is interpreted.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"shape components must be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")
        self.spacing = _spacing_tuple(self.spacing)
        if self.affine is None:
            self.affine = np.diag([*self.spacing, 1.0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def intensity_range(self) -> tuple[float, float]:
        return float(self.data.min()), float(self.data.max())

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))


class LabelVolume(Volume3D):
    """Binary volume (values exactly 0 or 1), stored as uint8."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != bool and not np.isin(data, (0, 1)).all():
            raise ValueError("non-binary label")
        self.data = data.astype(np.uint8)
        super().__post_init__()

    @property
    def count(self) -> int:
        return int(self.data.sum())


# -- I/O ----------------------------------------------------------------------

def load_volume(path, label: bool = False) -> Volume3D:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume: {path}")
    try:
        img = nib.load(str(path))
    except Exception as exc:  # nibabel raises a zoo of types for bad headers
        raise ValueError(f"malformed NIfTI file {path}: {exc}") from exc
    data = np.asarray(img.dataobj)
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    spacing = img.header.get_zooms()[:3]
    if label:
        if not np.isin(data, (0, 1)).all():
            raise ValueError(f"non-binary label in {path}")
        return LabelVolume(data, spacing, affine=img.affine)
    return Volume3D(data.astype(np.float32, copy=False), spacing, affine=img.affine)


def save_volume(v: Volume3D, path) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"directory does not exist: {path.parent}")
    if not os.access(path.parent, os.W_OK):
        raise PermissionError(f"cannot write to {path.parent}")
    if isinstance(v, LabelVolume):
        data = v.data.astype(np.uint8)
    else:
        data = v.data.astype(np.float32)
    img = nib.Nifti1Image(data, v.affine)
    img.header.set_zooms(v.spacing)
    nib.save(img, str(path))


# -- slicing ------------------------------------------------------------------

def extract_slice(v: Volume3D, z: int) -> np.ndarray:
    nz = v.shape[2]
    if not 0 <= z < nz:
        raise IndexError(f"slice index {z} out of range [0, {nz})")
    return v.data[:, :, z].copy()


def stack_slices(slices: Sequence[np.ndarray], spacing=(1.0, 1.0, 1.0),
                 label: bool = False) -> Volume3D:
    if len(slices) == 0:
        raise ValueError("cannot stack an empty list of slices")
    shape = np.shape(slices[0])
    for k, s in enumerate(slices):
        if np.shape(s) != shape or len(shape) != 2:
            raise ValueError(f"slice {k} has shape {np.shape(s)}, expected 2D {shape}")
    data = np.stack(slices, axis=2)
    cls = LabelVolume if label else Volume3D
    return cls(data, spacing)


def normalize_intensity(v: Volume3D) -> Volume3D:
    lo, hi = v.intensity_range
    if hi == lo:
        out = np.zeros_like(v.data, dtype=np.float32)
    else:
        out = ((v.data - lo) / (hi - lo)).astype(np.float32)
    return Volume3D(out, v.spacing, affine=v.affine)


# -- phantoms -----------------------------------------------------------------

@dataclass
class Ellipsoid:
    semi_axes: tuple[float, float, float]
    center: tuple[float, float, float]

    def __post_init__(self):
        self.semi_axes = tuple(float(a) for a in self.semi_axes)
        self.center = tuple(float(c) for c in self.center)

    def mask(self, shape) -> np.ndarray:
        """Voxel-center rule: voxel i is inside iff sum(((i - c) / a)^2) <= 1."""
        grids = np.ogrid[tuple(slice(0, n) for n in shape)]
        acc = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, self.center, self.semi_axes))
        return acc <= 1.0

    def fits(self, shape) -> bool:
        return all(c - a >= 0 and c + a <= n - 1
                   for a, c, n in zip(self.semi_axes, self.center, shape))


@dataclass
class PhantomSpec:
    """Low-contrast ellipsoid phantom.

    The target structure sits in Gaussian background noise; its mean intensity is
    ``bg_mean + contrast_gap``. Optional distractor ellipsoids share the target's
    intensity distribution, so intensity alone cannot say which one is the target.
    """

    shape: tuple[int, int, int] = (48, 48, 48)
    semi_axes: tuple[float, float, float] = (10.0, 12.0, 8.0)
    center: tuple[float, float, float] | None = None
    bg_mean: float = 100.0
    bg_std: float = 20.0
    fg_std: float = 20.0
    contrast_gap: float = 15.0
    distractors: list[Ellipsoid] = field(default_factory=list)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.semi_axes = tuple(float(a) for a in self.semi_axes)
        if self.center is None:
            self.center = tuple((n - 1) / 2 for n in self.shape)
        self.center = tuple(float(c) for c in self.center)
        self.spacing = _spacing_tuple(self.spacing)
        self.distractors = [d if isinstance(d, Ellipsoid) else Ellipsoid(**d)
                            for d in self.distractors]
        if self.bg_std < 0 or self.fg_std < 0:
            raise ValueError("intensity std values must be >= 0")
        if any(a <= 0 for a in self.semi_axes):
            raise ValueError("semi-axes must be > 0")
        for e in [self.target, *self.distractors]:
            if not e.fits(self.shape):
                raise ValueError(f"ellipsoid {e} exceeds volume bounds {self.shape}")

    @property
    def target(self) -> Ellipsoid:
        return Ellipsoid(self.semi_axes, self.center)

    @property
    def fg_mean(self) -> float:
        return self.bg_mean + self.contrast_gap

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, path) -> "PhantomSpec":
        return cls(**json.loads(Path(path).read_text()))


def generate_phantom(spec: PhantomSpec) -> tuple[Volume3D, LabelVolume]:
    rng = np.random.default_rng(spec.seed)
    label = spec.target.mask(spec.shape)
    fg = label.copy()
    for d in spec.distractors:
        fg |= d.mask(spec.shape)
    bg_noise = rng.standard_normal(spec.shape)
    fg_noise = rng.standard_normal(spec.shape)
    image = np.where(fg, spec.fg_mean + spec.fg_std * fg_noise,
                     spec.bg_mean + spec.bg_std * bg_noise).astype(np.float32)
    return Volume3D(image, spec.spacing), LabelVolume(label, spec.spacing)
