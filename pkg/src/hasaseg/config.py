"""Run configuration: nested dataclasses read from one YAML (or JSON) file."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .backends import CorruptionSpec
from .pipeline import POLICIES, AugmentSpec, GuessFilters
from .prompts import JitterSpec, PointPolicy
from .sdm import SdmSpec
from .student import StudentConfig
from .volumes import Ellipsoid, PhantomSpec


@dataclass
class Paths:
    data_root: str = "data"
    exchange_dir: str = "exchange"
    output_dir: str = "runs"


@dataclass
class InjectSpec:
    """Shift the stored reference label of ``count`` subjects of ``split`` by ``shift`` voxels."""

    split: str = "test"
    count: int = 0
    shift: int = 10


@dataclass
class PhantomSetSpec:
    count: int = 40
    shape: tuple[int, int, int] = (48, 48, 48)
    semi_axes_range: tuple[float, float] = (6.0, 10.0)
    distractors: int = 1
    bg_mean: float = 100.0
    bg_std: float = 20.0
    fg_std: float = 20.0
    contrast_gap: float = 15.0
    t2_contrast_gap: float = 40.0
    inject: InjectSpec = field(default_factory=InjectSpec)
    seed: int | None = None

    def __post_init__(self):
        self.shape = tuple(int(v) for v in self.shape)
        self.semi_axes_range = tuple(float(v) for v in self.semi_axes_range)
        if isinstance(self.inject, dict):
            self.inject = InjectSpec(**self.inject)
        lo, hi = self.semi_axes_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad semi_axes_range {self.semi_axes_range}")
        if self.distractors not in (0, 1):
            raise ValueError("distractors must be 0 or 1")
        # target lives in x < n/2 - 1, the distractor in x > n/2, both with full extent
        half = self.shape[0] // 2 - 2
        if 2 * hi > half or any(2 * hi > n - 1 for n in self.shape[1:]):
            raise ValueError(f"semi-axes up to {hi} do not fit shape {self.shape}")

    def specs(self, seed: int) -> list[PhantomSpec]:
        """Per-subject phantom specs; target on one x-half, distractor on the other."""
        out = []
        n = self.shape
        half = n[0] // 2
        for i in range(self.count):
            rng = np.random.default_rng([seed, i])
            axes = rng.uniform(*self.semi_axes_range, size=3)
            d_axes = rng.uniform(*self.semi_axes_range, size=3)
            left = bool(rng.integers(0, 2))
            # target x range [0, half - 2], distractor x range [half + 1, n - 1]
            lo_region, hi_region = (0, half - 2), (half + 1, n[0] - 1)
            t_reg, d_reg = (lo_region, hi_region) if left else (hi_region, lo_region)

            def centre(a, reg):
                x = rng.uniform(reg[0] + a[0], reg[1] - a[0])
                yz = [rng.uniform(a[k], n[k] - 1 - a[k]) for k in (1, 2)]
                return (x, *yz)

            c = centre(axes, t_reg)
            dc = centre(d_axes, d_reg)
            distractors = [Ellipsoid(tuple(d_axes), dc)] if self.distractors else []
            out.append(PhantomSpec(n, tuple(axes), c, self.bg_mean, self.bg_std, self.fg_std,
                                   self.contrast_gap, distractors, seed=int(rng.integers(2**31))))
        return out


@dataclass
class BackendConfig:
    kind: str = "oracle"
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    filters: GuessFilters = field(default_factory=GuessFilters)


@dataclass
class MetricOptions:
    outlier_k: float = 3.0
    pooled_vol_acc: bool = False
    edge_radius: float = 2.0


@dataclass
class RunConfig:
    tag: str = "run"
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    phantoms: PhantomSetSpec = field(default_factory=PhantomSetSpec)
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    backend: BackendConfig = field(default_factory=BackendConfig)
    jitter: JitterSpec = field(default_factory=JitterSpec)
    points: PointPolicy = field(default_factory=PointPolicy)
    sdm: SdmSpec = field(default_factory=SdmSpec)
    policies: list[str] = field(default_factory=lambda: ["t1_only", "guess_raw", "guess_sdm"])
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    student_preset: str = "desk"
    student: dict = field(default_factory=dict)
    metrics: MetricOptions = field(default_factory=MetricOptions)

    def __post_init__(self):
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise ValueError(f"unknown channel policies {bad}")
        if self.student_preset not in ("desk", "full"):
            raise ValueError(f"unknown student preset {self.student_preset!r}")
        self.student_config(self.policies[0] if self.policies else "guess_sdm")

    def phantom_seed(self) -> int:
        return self.seed if self.phantoms.seed is None else self.phantoms.seed

    def student_config(self, policy: str) -> StudentConfig:
        kw = {"seed": self.seed, **self.student,
              "in_channels": 1 if policy == "t1_only" else 2}
        if self.student_preset == "desk":
            return StudentConfig.desk(**kw)
        return StudentConfig(**kw)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data):
    """Recursively construct dataclass ``cls`` from a plain dict."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}, got {data!r}")
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current) and isinstance(value, dict):
            value = _build(type(current), value)
        elif isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, copy.deepcopy(data or {}))


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    data = yaml.safe_load(Path(path).read_text()) if path else {}
    data = data or {}
    for item in overrides or []:
        apply_override(data, item)
    return config_from_dict(data)


def apply_override(data: dict, item: str) -> None:
    """Apply ``a.b.c=value`` (value parsed as YAML) to a nested dict in place."""
    if "=" not in item:
        raise ValueError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {item!r} descends into a non-mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
