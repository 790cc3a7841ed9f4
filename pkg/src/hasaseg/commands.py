"""Implementations behind the ``hasaseg`` subcommands.

Dataset layout under ``paths.data_root``::

    manifest.json
    <id>_t1.nii.gz  <id>_t2.nii.gz  <id>_label.nii.gz  <id>_prior.nii.gz
    <id>_prompts.jsonl  <id>_guess.nii.gz  <id>_guess_sdm.nii.gz

``prior`` is the mask that drives prompts and the oracle backend (a stand-in for
an earlier model's output); ``label`` is the reference used for training and
scoring.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .backends import make_backend
from .config import RunConfig, dump_config
from .pipeline import (TrainingSample, apply_transform, assemble_sample, build_guess_mask,
                       build_manifest, expand, read_manifest, split_ids, write_manifest)
from .prompts import extract_prompt, slice_rng, write_prompts
from .sdm import sdm_volume
from .student import (build_student, load_checkpoint, predict, save_checkpoint,
                      train)
from .volumes import LabelVolume, Volume3D, extract_slice, generate_phantom, load_volume, save_volume

log = logging.getLogger(__name__)


class ConfigMismatch(RuntimeError):
    pass


def make_run_dir(cfg: RunConfig, command: str, run_dir=None) -> Path:
    if run_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path(cfg.paths.output_dir) / f"{stamp}-{cfg.tag}-{command}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    return run_dir


def subject_path(cfg: RunConfig, sid: str, kind: str) -> Path:
    return Path(cfg.paths.data_root) / f"{sid}_{kind}.nii.gz"


# -- phantoms -----------------------------------------------------------------

def _shift_label(label: LabelVolume, shift: int) -> LabelVolume:
    """Translate along x toward the volume centre, zero-filling."""
    data = label.data
    xs = np.nonzero(data.any(axis=(1, 2)))[0]
    centre = xs.mean() if xs.size else 0
    s = shift if centre < data.shape[0] / 2 else -shift
    out = np.zeros_like(data)
    if s >= 0:
        out[s:] = data[: data.shape[0] - s]
    else:
        out[:s] = data[-s:]
    return LabelVolume(out, label.spacing)


def cmd_phantoms(cfg: RunConfig) -> dict:
    ps = cfg.phantoms
    if ps.count < 1:
        raise ValueError("phantom count must be >= 1")
    root = Path(cfg.paths.data_root)
    root.mkdir(parents=True, exist_ok=True)
    seed = cfg.phantom_seed()
    subjects = []
    specs = ps.specs(seed)
    for i, spec in enumerate(specs):
        sid = f"ph{i:03d}"
        t1, label = generate_phantom(spec)
        t2_spec = type(spec)(**{**spec.to_dict(), "contrast_gap": ps.t2_contrast_gap,
                                "seed": spec.seed + 1})
        t2, _ = generate_phantom(t2_spec)
        save_volume(t1, subject_path(cfg, sid, "t1"))
        save_volume(t2, subject_path(cfg, sid, "t2"))
        save_volume(label, subject_path(cfg, sid, "label"))
        save_volume(label, subject_path(cfg, sid, "prior"))
        subjects.append({"id": sid, "injected": False})
    manifest = build_manifest(subjects, cfg.split, seed, augment_spec=cfg.augment)
    if ps.inject.count:
        targets = split_ids(manifest, ps.inject.split)[: ps.inject.count]
        for entry in manifest["subjects"]:
            if entry["id"] in targets:
                path = subject_path(cfg, entry["id"], "label")
                save_volume(_shift_label(load_volume(path, label=True), ps.inject.shift), path)
                entry["injected"] = True
    manifest["phantoms"] = [s.to_dict() for s in specs]
    write_manifest(manifest, root / "manifest.json")
    return manifest


# -- guesses ------------------------------------------------------------------

def cmd_prompts(cfg: RunConfig) -> None:
    """Write per-subject prompt files for external foundation-model scripts."""
    manifest = read_manifest(Path(cfg.paths.data_root) / "manifest.json")
    for entry in manifest["subjects"]:
        sid = entry["id"]
        prior = load_volume(subject_path(cfg, sid, "prior"), label=True)
        prompts = []
        for z in range(prior.shape[2]):
            p = extract_prompt(extract_slice(prior, z), cfg.jitter, slice_rng(cfg.jitter.seed, z),
                               z=z, policy=cfg.points)
            if p is not None:
                prompts.append(p)
        write_prompts(prompts, Path(cfg.paths.data_root) / f"{sid}_prompts.jsonl")


def cmd_guess(cfg: RunConfig) -> None:
    manifest = read_manifest(Path(cfg.paths.data_root) / "manifest.json")
    root = Path(cfg.paths.data_root)
    for entry in manifest["subjects"]:
        sid = entry["id"]
        t1 = load_volume(subject_path(cfg, sid, "t1"))
        prior = load_volume(subject_path(cfg, sid, "prior"), label=True)
        backend = make_backend(cfg.backend.kind, sid, truth=prior,
                               corruption=cfg.backend.corruption,
                               exchange_dir=cfg.paths.exchange_dir)
        guess, prompts = build_guess_mask(t1, prior, backend, cfg.jitter, cfg.backend.filters,
                                          cfg.points)
        write_prompts(prompts, root / f"{sid}_prompts.jsonl")
        save_volume(guess, subject_path(cfg, sid, "guess"))
        save_volume(sdm_volume(guess, cfg.sdm), subject_path(cfg, sid, "guess_sdm"))
        log.info("guess %s: %d voxels (prior %d)", sid, guess.count, prior.count)


# -- training -----------------------------------------------------------------

SECOND_CHANNEL = {"guess_sdm": "guess_sdm", "guess_raw": "guess", "t2": "t2"}


def load_sample(cfg: RunConfig, sid: str, policy: str) -> TrainingSample:
    t1 = load_volume(subject_path(cfg, sid, "t1"))
    label = load_volume(subject_path(cfg, sid, "label"), label=True)
    second = None
    if policy in SECOND_CHANNEL:
        path = subject_path(cfg, sid, SECOND_CHANNEL[policy])
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run the guess command first")
        second = load_volume(path)
    return assemble_sample(t1, second, label, policy, sid)


def _regenerator(cfg: RunConfig, sid: str, policy: str):
    """Guess-channel rebuilder for augmented copies, or None to resample the guess."""
    if not cfg.augment.regenerate_guesses or policy not in ("guess_sdm", "guess_raw"):
        return None
    t1 = load_volume(subject_path(cfg, sid, "t1"))
    prior = load_volume(subject_path(cfg, sid, "prior"), label=True)

    def rebuild(transform):
        t1_t = Volume3D(apply_transform(t1.data, transform, order=1), t1.spacing)
        prior_t = LabelVolume(apply_transform(prior.data, transform, order=0), prior.spacing)
        backend = make_backend(cfg.backend.kind, sid, truth=prior_t,
                               corruption=cfg.backend.corruption,
                               exchange_dir=cfg.paths.exchange_dir)
        guess, _ = build_guess_mask(t1_t, prior_t, backend, cfg.jitter, cfg.backend.filters,
                                    cfg.points)
        out = sdm_volume(guess, cfg.sdm) if policy == "guess_sdm" else guess
        return out.data.astype(np.float32)

    return rebuild


def _resume_key(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    d["student"] = {k: v for k, v in d["student"].items() if k != "epochs"}
    d.pop("tag")
    return d


def cmd_train(cfg: RunConfig, run_dir: Path, resume: Path | None = None) -> dict:
    """Train one student per channel policy; writes ``<policy>/model.pt`` and history."""
    torch.use_deterministic_algorithms(True)
    manifest = read_manifest(Path(cfg.paths.data_root) / "manifest.json")
    train_ids = split_ids(manifest, "train")
    val_ids = split_ids(manifest, "val")
    if not train_ids:
        raise ValueError("manifest has an empty train split")
    if resume is not None:
        import yaml
        from .config import config_from_dict
        old = config_from_dict(yaml.safe_load((Path(resume) / "config.yaml").read_text()))
        if _resume_key(old) != _resume_key(cfg):
            raise ConfigMismatch(f"configuration differs from the run being resumed ({resume})")
    histories = {}
    for policy in cfg.policies:
        scfg = cfg.student_config(policy)
        out = run_dir / policy
        out.mkdir(parents=True, exist_ok=True)
        train_set = [s for sid in train_ids
                     for s in expand(load_sample(cfg, sid, policy), cfg.augment,
                                     _regenerator(cfg, sid, policy))]
        val_set = [load_sample(cfg, sid, policy) for sid in val_ids]
        model = build_student(scfg)
        state = None
        if resume is not None:
            last = Path(resume) / policy / "last.pt"
            if last.exists():
                model, _, payload = load_checkpoint(last)
                state = payload["state"]

        def on_epoch(m, hist, st, out=out, scfg=scfg):
            save_checkpoint(out / "last.pt", m, scfg, hist, st)
            hist.to_csv(out / "history.csv")

        model, history = train(model, train_set, scfg, val_set, resume=state, on_epoch=on_epoch)
        save_checkpoint(out / "model.pt", model, scfg, history)
        history.to_csv(out / "history.csv")
        histories[policy] = history
    return histories


# -- evaluation ---------------------------------------------------------------

def _worst_slice(truth: np.ndarray) -> int:
    return int(np.argmax(truth.sum(axis=(0, 1))))


def cmd_eval(cfg: RunConfig, run_dir: Path, checkpoints: dict[str, Path] | None = None,
             ground_truth: bool = False, split: str = "test") -> dict:
    """Score checkpoints on a split; writes records, table, edge maps and outliers."""
    manifest = read_manifest(Path(cfg.paths.data_root) / "manifest.json")
    ids = split_ids(manifest, split)
    if not ids:
        raise ValueError(f"manifest has an empty {split} split")
    injected = {e["id"] for e in manifest["subjects"] if e.get("injected")}
    edges_dir = run_dir / "edges"
    edges_dir.mkdir(parents=True, exist_ok=True)

    configs = {"ground_truth": None} if ground_truth else dict(checkpoints or {})
    if not configs:
        raise ValueError("nothing to evaluate: pass checkpoints or ground_truth")
    records, outliers, edge_summary = [], {}, {}
    for name, ckpt in configs.items():
        model = scfg = None
        if ckpt is not None:
            model, scfg, _ = load_checkpoint(ckpt)
        dists, recs = [], []
        for sid in ids:
            label = load_volume(subject_path(cfg, sid, "label"), label=True)
            if model is None:
                pred = label
            else:
                sample = load_sample(cfg, sid, name)
                pred = predict(model, sample.channels, scfg.patch_size, scfg.overlap,
                               label.spacing).mask
            rec = M.evaluate_pair(sid, pred, label, config=name)
            recs.append(rec)
            err = M.edge_error_map(pred.data, label.data)
            if sid not in injected:
                dists.append(err.distances)
            z = _worst_slice(label.data)
            t1 = load_volume(subject_path(cfg, sid, "t1"))
            M.render_edge_overlay(t1.data[:, :, z], err.fp[:, :, z], err.fn[:, :, z],
                                  edges_dir / f"{name}_{sid}_z{z}.png")
        records += recs
        flagged = M.flag_outliers([r.dice for r in recs], cfg.metrics.outlier_k) if len(recs) >= 4 else []
        outliers[name] = [{"subject_id": recs[i].subject_id, "dice": recs[i].dice,
                           "injected": recs[i].subject_id in injected} for i in flagged]
        all_d = np.concatenate(dists) if dists else np.zeros(0)
        edge_summary[name] = {
            "error_voxels": int(all_d.size),
            "fraction_within_radius": float(np.mean(all_d <= cfg.metrics.edge_radius)) if all_d.size else 1.0,
            "radius": cfg.metrics.edge_radius,
        }

    table = M.results_table(records, pooled=cfg.metrics.pooled_vol_acc)
    M.records_to_csv(records, run_dir / "records.csv")
    table.to_csv(run_dir / "results.csv")
    text = table.to_text()
    report = {"split": split, "outliers": outliers, "edges": edge_summary,
              "table": table.rows, "injected": sorted(injected)}
    clean = [r for r in records if r.subject_id not in injected]
    if injected and clean:
        # injected subjects have a deliberately wrong reference; score policies without them
        clean_table = M.results_table(clean, pooled=cfg.metrics.pooled_vol_acc)
        report["table_excluding_injected"] = clean_table.rows
        text += "\nexcluding injected subjects\n" + clean_table.to_text()
    (run_dir / "results.txt").write_text(text)
    (run_dir / "summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = []
    for name, flagged in outliers.items():
        ids_ = ", ".join(f["subject_id"] for f in flagged) or "none"
        lines.append(f"{name}: {ids_}")
    (run_dir / "outliers.txt").write_text("\n".join(lines) + "\n")
    return report


def find_checkpoints(train_run: Path, policies) -> dict[str, Path]:
    out = {}
    for policy in policies:
        path = Path(train_run) / policy / "model.pt"
        if not path.exists():
            raise FileNotFoundError(f"no checkpoint for policy {policy!r} at {path}")
        out[policy] = path
    return out
