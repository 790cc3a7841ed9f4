"""Per-slice prompts (jittered box + five labeled points) derived from a prior mask."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .sdm import signed_distance

POSITIVE, NEGATIVE, DONT_CARE = "positive", "negative", "dont_care"
LABELS = (POSITIVE, NEGATIVE, DONT_CARE)


@dataclass(frozen=True)
class BoundingBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class PromptPoint:
    x: int
    y: int
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown point label {self.label!r}")


@dataclass(frozen=True)
class SlicePrompt:
    z: int
    box: BoundingBox
    points: tuple[PromptPoint, ...]

    def __post_init__(self):
        if len(self.points) != 5:
            raise ValueError(f"a slice prompt needs exactly 5 points, got {len(self.points)}")

    def to_dict(self) -> dict:
        return {"z": self.z, "box": self.box.as_list(),
                "points": [{"x": p.x, "y": p.y, "label": p.label} for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "SlicePrompt":
        return cls(int(d["z"]), BoundingBox(*map(int, d["box"])),
                   tuple(PromptPoint(int(p["x"]), int(p["y"]), p["label"]) for p in d["points"]))


@dataclass(frozen=True)
class JitterSpec:
    max_shift: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")


@dataclass(frozen=True)
class PointPolicy:
    """Radii used to place the five points (2 positive, 2 negative, 1 don't-care)."""

    erosion_radius: int = 1
    negative_min_distance: float = 3.0
    dont_care_band: float = 2.0


def _as_binary(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2D slice, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("prior slice is not binary")
        mask = mask.astype(bool)
    return mask


def tight_box(mask: np.ndarray) -> BoundingBox | None:
    xs, ys = np.nonzero(mask)
    if xs.size == 0:
        return None
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def jitter_box(box: BoundingBox, shape, max_shift: int, rng: np.random.Generator) -> BoundingBox:
    shifts = rng.integers(-max_shift, max_shift + 1, size=4)
    x0, y0, x1, y1 = (np.array(box.as_list()) + shifts).tolist()
    x0, x1 = (int(np.clip(v, 0, shape[0] - 1)) for v in (x0, x1))
    y0, y1 = (int(np.clip(v, 0, shape[1] - 1)) for v in (y0, y1))
    return BoundingBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _pick(candidates: np.ndarray, n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    # candidates: (k, 2) array of voxel indices
    idx = rng.choice(len(candidates), size=n, replace=len(candidates) < n)
    return [tuple(int(v) for v in candidates[i]) for i in idx]


def sample_points(prior_slice, box: BoundingBox, rng: np.random.Generator,
                  policy: PointPolicy = PointPolicy()) -> list[PromptPoint]:
    mask = _as_binary(prior_slice)
    if not mask.any():
        raise ValueError("cannot sample points on an empty foreground")
    background = ~mask
    if not background.any():
        raise ValueError("no background: slice is entirely foreground")

    r = policy.erosion_radius
    if r > 0:
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        disk = xx ** 2 + yy ** 2 <= r * r
        core = ndimage.binary_erosion(mask, structure=disk, border_value=1)
    else:
        core = mask
    if not core.any():
        core = mask

    outside = ndimage.distance_transform_edt(background)  # distance to nearest foreground
    far = background & (outside > policy.negative_min_distance)
    if far.any():
        # prefer negatives near the box, where they constrain the segmenter most
        pad = int(np.ceil(2 * policy.negative_min_distance))
        near = np.zeros_like(far)
        near[max(box.x_min - pad, 0):box.x_max + pad + 1,
             max(box.y_min - pad, 0):box.y_max + pad + 1] = True
        negatives = far & near if (far & near).any() else far
    else:
        negatives = background

    band = np.abs(signed_distance(mask)) <= policy.dont_care_band

    pos = _pick(np.argwhere(core), 2, rng)
    neg = _pick(np.argwhere(negatives), 2, rng)
    dc = _pick(np.argwhere(band), 1, rng)
    return ([PromptPoint(x, y, POSITIVE) for x, y in pos]
            + [PromptPoint(x, y, NEGATIVE) for x, y in neg]
            + [PromptPoint(x, y, DONT_CARE) for x, y in dc])


def extract_prompt(prior_slice, jitter: JitterSpec, rng: np.random.Generator, z: int = 0,
                   policy: PointPolicy = PointPolicy()) -> SlicePrompt | None:
    mask = _as_binary(prior_slice)
    box = tight_box(mask)
    if box is None:
        return None
    box = jitter_box(box, mask.shape, jitter.max_shift, rng)
    points = sample_points(mask, box, rng, policy)
    return SlicePrompt(z, box, tuple(points))


def slice_rng(seed: int, z: int) -> np.random.Generator:
    """Independent generator per slice so slices can be processed in any order."""
    return np.random.default_rng([int(seed), int(z)])


def write_prompts(prompts: Iterable[SlicePrompt], path) -> None:
    with open(path, "w") as fh:
        for p in prompts:
            fh.write(json.dumps(p.to_dict()) + "\n")


def read_prompts(path) -> dict[int, SlicePrompt]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            p = SlicePrompt.from_dict(json.loads(line))
            out[p.z] = p
    return out
