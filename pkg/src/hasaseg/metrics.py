"""Evaluation metrics: DICE, volume accuracy, edge-error maps, outlier flagging, tables."""
from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

from .sdm import signed_distance


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "data", a))
    b = np.asarray(getattr(b, "data", b))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.astype(bool), b.astype(bool)


def dice(a, b) -> float:
    """2|A&B| / (|A|+|B|); two empty masks score 1."""
    a, b = _pair(a, b)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def volume_accuracy(pred, truth, spacing=None) -> float:
    """max(0, 1 - |V_pred - V_true| / V_true), volumes in mm^3."""
    if spacing is None:
        spacing = getattr(truth, "spacing", (1.0, 1.0, 1.0))
    p, t = _pair(pred, truth)
    voxel = float(np.prod(spacing))
    v_true = int(t.sum()) * voxel
    if v_true == 0:
        raise ValueError("volume accuracy is undefined for an empty truth mask")
    v_pred = int(p.sum()) * voxel
    return max(0.0, 1.0 - abs(v_pred - v_true) / v_true)


def pooled_volume_accuracy(preds, truths, spacing=(1.0, 1.0, 1.0)) -> float:
    v_pred = sum(int(np.asarray(getattr(p, "data", p)).sum()) for p in preds)
    v_true = sum(int(np.asarray(getattr(t, "data", t)).sum()) for t in truths)
    if v_true == 0:
        raise ValueError("volume accuracy is undefined for an empty truth mask")
    return max(0.0, 1.0 - abs(v_pred - v_true) / v_true)


@dataclass
class EdgeErrors:
    fp: np.ndarray
    fn: np.ndarray
    distances: np.ndarray  # distance to the truth boundary of every error voxel
    counts: np.ndarray     # histogram over unit-width bins [k, k+1)
    edges: np.ndarray

    def fraction_within(self, radius: float) -> float:
        if self.distances.size == 0:
            return 1.0
        return float(np.mean(self.distances <= radius))


def edge_error_map(pred, truth, band: float = 1e6) -> EdgeErrors:
    p, t = _pair(pred, truth)
    fp = p & ~t
    fn = t & ~p
    err = fp | fn
    dist = np.abs(signed_distance(t, band))[err]
    if dist.size:
        edges = np.arange(0, math.floor(dist.max()) + 2, dtype=float)
        counts, edges = np.histogram(dist, bins=edges)
    else:
        counts, edges = np.zeros(0, dtype=int), np.zeros(1)
    return EdgeErrors(fp, fn, dist, counts, edges)


MAGENTA = (255, 0, 255)
GREEN = (0, 255, 0)


def render_edge_overlay(image: np.ndarray, fp: np.ndarray, fn: np.ndarray, path=None) -> Image.Image:
    """Grayscale slice with false positives in magenta and false negatives in green.

    Rows of the PNG index x, columns index y.
    """
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    gray = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    rgb = np.repeat((gray * 255).astype(np.uint8)[..., None], 3, axis=2)
    rgb[np.asarray(fp, bool)] = MAGENTA
    rgb[np.asarray(fn, bool)] = GREEN
    out = Image.fromarray(rgb)
    if path is not None:
        out.save(path)
    return out


def flag_outliers(scores, k: float = 3.0) -> list[int]:
    """Indices whose distance from the median exceeds ``k`` median absolute deviations."""
    s = np.asarray(scores, dtype=float)
    if s.size < 4:
        raise ValueError(f"need at least 4 scores, got {s.size}")
    if not k > 0:
        raise ValueError("k must be > 0")
    med = np.median(s)
    mad = np.median(np.abs(s - med))
    if mad == 0:
        return [int(i) for i in np.flatnonzero(s != med)]
    return [int(i) for i in np.flatnonzero(np.abs(s - med) / mad > k)]


@dataclass
class EvalRecord:
    subject_id: str
    dice: float
    vol_acc: float
    pred_volume_voxels: int
    true_volume_voxels: int
    edge_fp_count: int
    edge_fn_count: int
    config: str = ""

    def __post_init__(self):
        if not (0 <= self.dice <= 1 and 0 <= self.vol_acc <= 1):
            raise ValueError(f"metric out of range in {self}")
        if min(self.pred_volume_voxels, self.true_volume_voxels,
               self.edge_fp_count, self.edge_fn_count) < 0:
            raise ValueError(f"negative count in {self}")


def evaluate_pair(subject_id: str, pred, truth, config: str = "", spacing=None) -> EvalRecord:
    p, t = _pair(pred, truth)
    return EvalRecord(subject_id, dice(p, t), volume_accuracy(p, t, spacing or
                                                              getattr(truth, "spacing", (1, 1, 1))),
                      int(p.sum()), int(t.sum()), int((p & ~t).sum()), int((t & ~p).sum()), config)


@dataclass
class ResultsTable:
    rows: list[dict]

    COLUMNS = ("config", "n", "dice", "vol_acc")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "dice": f"{r['dice']:.4f}", "vol_acc": f"{r['vol_acc']:.4f}"})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_text(self) -> str:
        cells = [list(self.COLUMNS)] + [
            [r["config"], str(r["n"]), f"{r['dice']:.3f}", f"{r['vol_acc']:.3f}"] for r in self.rows]
        widths = [max(len(c[i]) for c in cells) for i in range(len(self.COLUMNS))]
        lines = ["  ".join(c.ljust(wd) if i == 0 else c.rjust(wd)
                           for i, (c, wd) in enumerate(zip(row, widths))) for row in cells]
        lines.insert(1, "  ".join("-" * wd for wd in widths))
        return "\n".join(lines) + "\n"

    def row(self, config: str) -> dict:
        for r in self.rows:
            if r["config"] == config:
                return r
        raise KeyError(config)


def results_table(records: list[EvalRecord], grouping=lambda r: r.config,
                  pooled: bool = False) -> ResultsTable:
    """Mean DICE and volume accuracy per configuration, in first-seen order.

    With ``pooled`` the volume accuracy is computed on summed volumes instead of
    averaged per subject.
    """
    if not records:
        raise ValueError("no records to tabulate")
    groups: OrderedDict[str, list[EvalRecord]] = OrderedDict()
    for r in records:
        groups.setdefault(grouping(r), []).append(r)
    rows = []
    for name, rs in groups.items():
        if pooled:
            vp = sum(r.pred_volume_voxels for r in rs)
            vt = sum(r.true_volume_voxels for r in rs)
            acc = max(0.0, 1.0 - abs(vp - vt) / vt)
        else:
            acc = float(np.mean([r.vol_acc for r in rs]))
        rows.append({"config": name, "n": len(rs), "dice": float(np.mean([r.dice for r in rs])),
                     "vol_acc": acc})
    return ResultsTable(rows)


def records_to_csv(records: list[EvalRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(records[0])), lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))
