"""Sources of 2D segmentation guesses and their post-processing.

The foundation model never runs in-process. External scripts read the prompt
JSON-lines file and write their candidates into a mask-exchange directory::

    <root>/<volume-id>/z<k>_cand<j>.png    8-bit, 0/255, rows index x
    <root>/<volume-id>/confidences.json    {"<k>": [conf_0, conf_1, ...]}
    <root>/<volume-id>/z<k>_attn.png       16-bit grayscale attention map

The oracle backend stands in for the model at desk scale by corrupting a known
mask.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .prompts import BoundingBox, SlicePrompt
from .volumes import LabelVolume


@dataclass
class GuessCandidate:
    mask: np.ndarray
    confidence: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class CorruptionSpec:
    dilation_radius: float = 0.0
    blob_noise_count: int = 0
    blob_radius: float = 3.0
    drop_slice_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dilation_radius < 0 or self.blob_noise_count < 0 or self.blob_radius < 0:
            raise ValueError("corruption radii and counts must be >= 0")
        if not 0.0 <= self.drop_slice_prob <= 1.0:
            raise ValueError("drop_slice_prob must lie in [0, 1]")


def normalize_attention(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a) if hi <= 0 else np.clip(a, 0.0, 1.0)
    return (a - lo) / (hi - lo)


# -- mask operations ----------------------------------------------------------

def _disk_grid(shape, cx, cy, r):
    xx, yy = np.ogrid[:shape[0], :shape[1]]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def corrupt_mask(truth_slice, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    truth = np.asarray(truth_slice, dtype=bool)
    # fixed draw order keeps outputs reproducible whatever the branch taken
    drop = rng.random() < spec.drop_slice_prob
    centers = rng.integers(0, truth.shape, size=(spec.blob_noise_count, 2))
    if spec.dilation_radius > 0 and truth.any():
        out = ndimage.distance_transform_edt(~truth) <= spec.dilation_radius
    else:
        out = truth.copy()
    for cx, cy in centers:
        out |= _disk_grid(truth.shape, cx, cy, spec.blob_radius)
    if drop:
        out[:] = False
    return out


def select_candidate(candidates: list[GuessCandidate]) -> GuessCandidate:
    if not candidates:
        raise ValueError("no candidates to select from")
    # np.argmax returns the first maximum, which is the declared tie-break
    return candidates[int(np.argmax([c.confidence for c in candidates]))]


EIGHT = np.ones((3, 3), dtype=bool)


def largest_contour_filter(mask, box: BoundingBox, eligibility: str = "centroid") -> np.ndarray:
    """Keep the largest 8-connected component lying in ``box``.

    ``eligibility`` is ``"centroid"`` (component centroid inside the box) or
    ``"intersection"`` (any voxel inside the box). Falls back to the globally
    largest component when none is eligible.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return mask.copy()
    ids = np.arange(1, n + 1)
    areas = ndimage.sum_labels(mask, labels, ids)
    if eligibility == "centroid":
        cents = ndimage.center_of_mass(mask, labels, ids)
        ok = np.array([box.contains(cx, cy) for cx, cy in cents])
    elif eligibility == "intersection":
        inside = labels[box.x_min:box.x_max + 1, box.y_min:box.y_max + 1]
        ok = np.isin(ids, np.unique(inside))
    else:
        raise ValueError(f"unknown eligibility rule {eligibility!r}")
    pool = ids[ok] if ok.any() else ids
    pool_areas = areas[ok] if ok.any() else areas
    keep = pool[int(np.argmax(pool_areas))]
    return labels == keep


def attention_to_guess(amap: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return np.asarray(amap) >= threshold


# -- backends -----------------------------------------------------------------

class Backend:
    kind = "base"
    prompted = True

    def generate(self, z: int, slice_image: np.ndarray, prompt: SlicePrompt | None):
        raise NotImplementedError


def _empty(shape) -> list[GuessCandidate]:
    return [GuessCandidate(np.zeros(shape, dtype=bool), 0.0)]


class OracleBackend(Backend):
    """Returns the corrupted true mask of each slice with confidence 1."""

    kind = "oracle"

    def __init__(self, truth: LabelVolume, corruption: CorruptionSpec = CorruptionSpec()):
        self.truth = truth
        self.corruption = corruption

    def generate(self, z, slice_image, prompt):
        if prompt is None:
            return _empty(slice_image.shape)
        rng = np.random.default_rng([self.corruption.seed, z])
        return [GuessCandidate(corrupt_mask(self.truth.data[:, :, z], self.corruption, rng), 1.0)]


class FileBackend(Backend):
    """Reads candidates written by an external model into the mask-exchange directory."""

    kind = "file"

    def __init__(self, root, volume_id: str):
        self.dir = Path(root) / volume_id
        self.volume_id = volume_id
        conf_path = self.dir / "confidences.json"
        self.confidences = json.loads(conf_path.read_text()) if conf_path.exists() else {}

    def generate(self, z, slice_image, prompt):
        if prompt is None:
            return _empty(slice_image.shape)
        confs = self.confidences.get(str(z))
        if confs is None:
            raise FileNotFoundError(
                f"no candidates for volume {self.volume_id!r} slice z={z} in {self.dir}")
        out = []
        for j, conf in enumerate(confs):
            path = self.dir / f"z{z}_cand{j}.png"
            if not path.exists():
                raise FileNotFoundError(f"missing candidate {path} (slice z={z})")
            mask = np.asarray(Image.open(path)) > 127
            if mask.shape != slice_image.shape:
                raise ValueError(f"{path} has shape {mask.shape}, slice is {slice_image.shape}")
            out.append(GuessCandidate(mask, float(conf)))
        return out


class AttentionBackend(Backend):
    """Prompt-less backend reading attention maps; returns the normalized map."""

    kind = "attention"
    prompted = False

    def __init__(self, root, volume_id: str):
        self.dir = Path(root) / volume_id
        self.volume_id = volume_id

    def generate(self, z, slice_image, prompt=None):
        path = self.dir / f"z{z}_attn.png"
        if not path.exists():
            raise FileNotFoundError(f"missing attention map for {self.volume_id!r} slice z={z}")
        amap = normalize_attention(np.asarray(Image.open(path)))
        if amap.shape != slice_image.shape:
            raise ValueError(f"{path} has shape {amap.shape}, slice is {slice_image.shape}")
        return amap


def backend_generate(backend: Backend, z: int, slice_image, prompt: SlicePrompt | None):
    if backend.prompted and prompt is None:
        return _empty(np.shape(slice_image))
    return backend.generate(z, np.asarray(slice_image), prompt)


def make_backend(kind: str, volume_id: str, truth: LabelVolume | None = None,
                 corruption: CorruptionSpec = CorruptionSpec(), exchange_dir=None) -> Backend:
    if kind == "oracle":
        if truth is None:
            raise ValueError("oracle backend needs a truth volume")
        return OracleBackend(truth, corruption)
    if kind == "file":
        return FileBackend(exchange_dir, volume_id)
    if kind == "attention":
        return AttentionBackend(exchange_dir, volume_id)
    raise ValueError(f"unknown backend kind {kind!r}")


# -- exchange-directory writers (used by adapter scripts and tests) ------------

def write_candidates(root, volume_id: str, z: int, candidates: list[GuessCandidate]) -> None:
    d = Path(root) / volume_id
    d.mkdir(parents=True, exist_ok=True)
    for j, c in enumerate(candidates):
        Image.fromarray(c.mask.astype(np.uint8) * 255).save(d / f"z{z}_cand{j}.png")
    conf_path = d / "confidences.json"
    confs = json.loads(conf_path.read_text()) if conf_path.exists() else {}
    confs[str(z)] = [float(c.confidence) for c in candidates]
    conf_path.write_text(json.dumps(confs, sort_keys=True, indent=1))


def write_attention(root, volume_id: str, z: int, amap: np.ndarray) -> None:
    d = Path(root) / volume_id
    d.mkdir(parents=True, exist_ok=True)
    scaled = np.round(normalize_attention(amap) * 65535).astype(np.uint16)
    Image.fromarray(scaled).save(d / f"z{z}_attn.png")
