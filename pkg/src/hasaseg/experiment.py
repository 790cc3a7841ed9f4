"""Desk-scale comparison of channel policies on phantoms.

For each seed: generate phantoms (one test label deliberately shifted), build
corrupted-oracle guesses, train one desk student per policy, evaluate on the
test split. Results are aggregated over seeds.
"""
from __future__ import annotations

import copy
import json
import logging
import time
from pathlib import Path

import numpy as np

from .commands import cmd_eval, cmd_guess, cmd_phantoms, cmd_train, find_checkpoints
from .config import RunConfig, apply_override, config_from_dict, dump_config

log = logging.getLogger(__name__)

# Phantoms follow the overlapping-intensity setup: target and background differ
# by less than one noise sd, and a same-intensity distractor sits in the other half.
DESK = {
    "tag": "desk",
    "phantoms": {"count": 40, "shape": [48, 48, 48], "semi_axes_range": [6.0, 10.0],
                 "distractors": 1, "inject": {"split": "test", "count": 1, "shift": 10}},
    "split": [0.6, 0.2, 0.2],
    "backend": {"kind": "oracle",
                "corruption": {"dilation_radius": 2.0, "blob_noise_count": 3, "blob_radius": 3.0,
                               "drop_slice_prob": 0.1}},
    "policies": ["t1_only", "guess_raw", "guess_sdm"],
    "augment": {"copies": 4},
    "student_preset": "desk",
    "student": {"epochs": 8, "learning_rate": 3e-3},
}


def desk_config(workdir, seed: int, overrides: list[str] | None = None) -> RunConfig:
    data = copy.deepcopy(DESK)
    data["seed"] = seed
    data["tag"] = f"desk-s{seed}"
    root = Path(workdir) / f"seed{seed}"
    data["paths"] = {"data_root": str(root / "data"), "exchange_dir": str(root / "exchange"),
                     "output_dir": str(root / "runs")}
    for item in overrides or []:
        apply_override(data, item)
    return config_from_dict(data)


def run_seed(cfg: RunConfig) -> dict:
    root = Path(cfg.paths.output_dir)
    train_dir, eval_dir = root / "train", root / "eval"
    for d in (train_dir, eval_dir):
        d.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, d / "config.yaml")
    t0 = time.perf_counter()
    cmd_phantoms(cfg)
    cmd_guess(cfg)
    cmd_train(cfg, train_dir)
    report = cmd_eval(cfg, eval_dir, find_checkpoints(train_dir, cfg.policies))
    report["seconds"] = time.perf_counter() - t0
    return report


def aggregate(reports: list[dict], policies) -> dict:
    """Mean test metrics over seeds (injected subjects excluded), pooled edge
    fractions, and whether each seed's injected subject was flagged."""
    out = {"policies": {}, "seeds": len(reports)}
    for p in policies:
        rows = [next(r for r in rep.get("table_excluding_injected", rep["table"])
                     if r["config"] == p) for rep in reports]
        edges = [rep["edges"][p] for rep in reports]
        n_err = sum(e["error_voxels"] for e in edges)
        within = sum(e["fraction_within_radius"] * e["error_voxels"] for e in edges)
        out["policies"][p] = {
            "dice": float(np.mean([r["dice"] for r in rows])),
            "vol_acc": float(np.mean([r["vol_acc"] for r in rows])),
            "vol_acc_per_seed": [r["vol_acc"] for r in rows],
            "edge_fraction_within": within / n_err if n_err else 1.0,
            "edge_error_voxels": n_err,
            "injected_flagged": [
                sorted({f["subject_id"] for f in rep["outliers"][p] if f["injected"]})
                == rep["injected"] for rep in reports],
        }
    out["seconds"] = float(sum(rep["seconds"] for rep in reports))
    return out


def run_desk(workdir, seeds=(0, 1, 2), overrides: list[str] | None = None) -> dict:
    workdir = Path(workdir)
    reports, cfg = [], None
    for seed in seeds:
        cfg = desk_config(workdir, seed, overrides)
        rep = run_seed(cfg)
        log.info("seed %d done in %.0f s", seed, rep["seconds"])
        reports.append(rep)
    summary = aggregate(reports, cfg.policies)
    summary["per_seed"] = reports
    (workdir / "desk_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def format_summary(summary: dict) -> str:
    lines = [f"{'policy':<10} {'dice':>6} {'vol_acc':>8} {'edge<=2':>8}  per-seed vol_acc"]
    for p, r in summary["policies"].items():
        seeds = " ".join(f"{v:.3f}" for v in r["vol_acc_per_seed"])
        lines.append(f"{p:<10} {r['dice']:6.3f} {r['vol_acc']:8.3f} "
                     f"{r['edge_fraction_within']:8.3f}  {seeds}")
    lines.append(f"{summary['seeds']} seeds, {summary['seconds'] / 60:.1f} min")
    return "\n".join(lines) + "\n"
