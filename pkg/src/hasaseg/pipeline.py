"""Guess-volume construction, dual-channel sample assembly, augmentation, manifests."""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .backends import (Backend, attention_to_guess, backend_generate, largest_contour_filter,
                       select_candidate)
from .prompts import JitterSpec, PointPolicy, SlicePrompt, extract_prompt, slice_rng
from .sdm import SdmSpec, sdm_volume
from .volumes import LabelVolume, Volume3D, extract_slice, normalize_intensity, stack_slices

POLICIES = ("guess_sdm", "guess_raw", "t2", "blank", "t1_only")


@dataclass(frozen=True)
class GuessFilters:
    contour_filter: bool = True
    eligibility: str = "centroid"
    attention_threshold: float = 0.5


def build_guess_mask(t1: Volume3D, prior: LabelVolume, backend: Backend,
                     jitter: JitterSpec = JitterSpec(), filters: GuessFilters = GuessFilters(),
                     points: PointPolicy = PointPolicy()
                     ) -> tuple[LabelVolume, list[SlicePrompt]]:
    """Run prompts -> backend -> selection -> contour filter slice by slice.

    Returns the binary guess volume and the prompts that were issued.
    """
    if t1.shape != prior.shape:
        raise ValueError(f"t1 {t1.shape} and prior {prior.shape} differ in shape")
    slices, prompts = [], []
    for z in range(t1.shape[2]):
        image = extract_slice(t1, z)
        prompt = extract_prompt(extract_slice(prior, z), jitter, slice_rng(jitter.seed, z),
                                z=z, policy=points)
        if prompt is not None:
            prompts.append(prompt)
        out = backend_generate(backend, z, image, prompt)
        if isinstance(out, np.ndarray):  # attention map, no candidates to choose from
            mask = attention_to_guess(out, filters.attention_threshold)
        else:
            mask = select_candidate(out).mask
        if filters.contour_filter and prompt is not None and mask.any():
            mask = largest_contour_filter(mask, prompt.box, filters.eligibility)
        slices.append(mask)
    guess = stack_slices(slices, t1.spacing, label=True)
    guess.affine = t1.affine
    return guess, prompts


def build_guess_volume(t1: Volume3D, prior: LabelVolume, backend: Backend,
                       jitter: JitterSpec = JitterSpec(), sdm: SdmSpec = SdmSpec(),
                       policy: str = "guess_sdm", filters: GuessFilters = GuessFilters()
                       ) -> Volume3D:
    guess, _ = build_guess_mask(t1, prior, backend, jitter, filters)
    if policy == "guess_sdm":
        return sdm_volume(guess, sdm)
    if policy == "guess_raw":
        return guess
    raise ValueError(f"policy {policy!r} does not use a guess volume")


# -- samples ------------------------------------------------------------------

@dataclass
class TrainingSample:
    """Channel-stacked image ``(C, X, Y, Z)`` with a binary label ``(X, Y, Z)``.

    ``transform`` is the 4x4 homogeneous map from output voxel to source voxel
    coordinates applied by ``augment`` (identity for un-augmented samples).
    """

    channels: np.ndarray
    label: np.ndarray
    subject_id: str = ""
    policy: str = "guess_sdm"
    augmentation_tag: str = "orig"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    transform: np.ndarray = field(default_factory=lambda: np.eye(4))

    @property
    def shape(self):
        return self.label.shape

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]


def assemble_sample(t1: Volume3D, second: Volume3D | None, label: LabelVolume,
                    policy: str = "guess_sdm", subject_id: str = "") -> TrainingSample:
    """Stack T1 with the policy's second channel.

    Intensity images (T1, T2) are min-max normalized; guess channels already live
    in [0, 1] and pass through unchanged so the 0.5 boundary level survives.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown channel policy {policy!r}")
    if t1.shape != label.shape:
        raise ValueError(f"t1 {t1.shape} and label {label.shape} differ in shape")
    ch0 = normalize_intensity(t1).data
    if policy == "t1_only":
        chans = [ch0]
    elif policy == "blank":
        chans = [ch0, np.zeros_like(ch0)]
    else:
        if second is None:
            raise ValueError(f"policy {policy!r} requires a second channel")
        if second.shape != t1.shape:
            raise ValueError(f"second channel {second.shape} does not match t1 {t1.shape}")
        if policy == "t2":
            ch1 = normalize_intensity(second).data
        else:
            ch1 = second.data.astype(np.float32)
            if ch1.min() < 0 or ch1.max() > 1:
                raise ValueError("guess channel must lie in [0, 1]")
        chans = [ch0, ch1]
    return TrainingSample(np.stack(chans).astype(np.float32), label.data.astype(np.uint8),
                          subject_id, policy, "orig", label.spacing)


@dataclass(frozen=True)
class AugmentSpec:
    copies: int = 4
    gamma_range: tuple[float, float] = (0.7, 1.5)
    noise_std_max: float = 0.05
    rotate_max_deg: float = 5.0
    scale_range: tuple[float, float] = (0.95, 1.05)
    translate_max: float = 5.0
    seed: int = 0
    # rebuild the guess channel from the transformed image instead of resampling it
    regenerate_guesses: bool = False

    def __post_init__(self):
        if self.copies < 1:
            raise ValueError("copies must be >= 1")
        if self.gamma_range[0] > self.gamma_range[1] or self.gamma_range[0] <= 0:
            raise ValueError(f"bad gamma_range {self.gamma_range}")
        if self.scale_range[0] > self.scale_range[1] or self.scale_range[0] <= 0:
            raise ValueError(f"bad scale_range {self.scale_range}")
        if min(self.noise_std_max, self.rotate_max_deg, self.translate_max) < 0:
            raise ValueError("augmentation magnitudes must be >= 0")

    @classmethod
    def identity(cls, copies: int = 1, seed: int = 0) -> "AugmentSpec":
        return cls(copies, (1.0, 1.0), 0.0, 0.0, (1.0, 1.0), 0.0, seed)


def _rotation(ax, ay, az) -> np.ndarray:
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def augment_rng(spec: AugmentSpec, subject_id: str, copy_index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, zlib.crc32(subject_id.encode()), copy_index])


def sample_transform(shape, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random output->source voxel map, rotating and scaling about the volume center."""
    angles = np.deg2rad(rng.uniform(-spec.rotate_max_deg, spec.rotate_max_deg, size=3))
    scales = rng.uniform(*spec.scale_range, size=3)
    shift = rng.uniform(-spec.translate_max, spec.translate_max, size=3)
    m = _rotation(*angles) @ np.diag(scales)
    c = (np.asarray(shape) - 1) / 2.0
    t = np.eye(4)
    t[:3, :3] = m
    t[:3, 3] = c + shift - m @ c
    return t


def apply_transform(volume: np.ndarray, transform: np.ndarray, order: int) -> np.ndarray:
    return ndimage.affine_transform(volume, transform[:3, :3], offset=transform[:3, 3],
                                    order=order, mode="nearest")


def augment(sample: TrainingSample, spec: AugmentSpec, copy_index: int,
            regenerate=None) -> TrainingSample:
    """One shared spatial transform for every channel and the label; gamma and
    noise touch the intensity channel only.

    ``regenerate(transform)`` may return a replacement for channel 1 built from
    the transformed source volumes (used when ``spec.regenerate_guesses``).
    """
    rng = augment_rng(spec, sample.subject_id, copy_index)
    t = sample_transform(sample.shape, spec, rng)
    gamma = rng.uniform(*spec.gamma_range)
    noise_std = rng.uniform(0.0, spec.noise_std_max)
    noise = rng.standard_normal(sample.shape)

    chans = np.stack([apply_transform(c, t, order=1) for c in sample.channels])
    if regenerate is not None and sample.n_channels > 1:
        chans[1] = regenerate(sample.transform @ t)
    label = apply_transform(sample.label, t, order=0).astype(np.uint8)
    ch0 = chans[0].astype(np.float64) ** gamma + noise_std * noise
    chans[0] = np.clip(ch0, 0.0, 1.0)
    return replace(sample, channels=chans.astype(np.float32), label=label,
                   augmentation_tag=f"aug{copy_index}", transform=sample.transform @ t)


def expand(sample: TrainingSample, spec: AugmentSpec, regenerate=None) -> list[TrainingSample]:
    """Copy 0 is the original sample; the rest are augmented copies."""
    return [sample] + [augment(sample, spec, k, regenerate) for k in range(1, spec.copies)]


# -- manifests ----------------------------------------------------------------

def split_counts(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` subjects."""
    raw = np.asarray(fractions, dtype=float) * n
    counts = np.floor(raw + 1e-9).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts.tolist()


def build_manifest(subjects: list[dict], split_fractions=(0.6, 0.2, 0.2), seed: int = 0,
                   policy: str | None = None, augment_spec: AugmentSpec | None = None) -> dict:
    """Subject-level split. ``subjects`` are dicts with at least an ``id`` key."""
    if not subjects:
        raise ValueError("empty subject list")
    if len(split_fractions) != 3 or abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three values summing to 1: {split_fractions}")
    if min(split_fractions) < 0:
        raise ValueError("split fractions must be >= 0")
    order = np.random.default_rng(seed).permutation(len(subjects))
    n_train, n_val, _ = split_counts(len(subjects), split_fractions)
    names = ["train"] * n_train + ["val"] * n_val
    names += ["test"] * (len(subjects) - len(names))
    entries = []
    for rank, i in enumerate(order):
        entries.append({**subjects[i], "split": names[rank]})
    entries.sort(key=lambda e: e["id"])
    return {
        "seed": seed,
        "split_fractions": list(split_fractions),
        "policy": policy,
        # JSON-native so a written manifest reads back equal
        "augment": json.loads(json.dumps(asdict(augment_spec))) if augment_spec else None,
        "subjects": entries,
    }


def split_ids(manifest: dict, split: str) -> list[str]:
    return [s["id"] for s in manifest["subjects"] if s["split"] == split]


def write_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
