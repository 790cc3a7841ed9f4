"""Dual-channel 3D U-Net student: model, training loop, sliding-window inference."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .losses import boundary_loss, dice_loss, dynamic_loss, normalized_sdm
from .pipeline import TrainingSample
from .volumes import LabelVolume, Volume3D

log = logging.getLogger(__name__)


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return t


@dataclass
class StudentConfig:
    in_channels: int = 2
    depth: int = 3
    base_filters: int = 16
    param_budget: int | None = 3_000_000
    patch_size: tuple[int, int, int] = (64, 64, 64)
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 2
    band: float = 10.0
    loss_offset: float = 0.5
    loss_temperature: float = 1.0
    hard_switch: bool = False
    overlap: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.patch_size = _triple(self.patch_size)
        if self.in_channels not in (1, 2):
            raise ValueError("in_channels must be 1 or 2")
        if self.depth < 1 or self.base_filters < 1:
            raise ValueError("depth and base_filters must be >= 1")
        step = 2 ** self.depth
        if any(p % step for p in self.patch_size):
            raise ValueError(f"patch_size {self.patch_size} not divisible by 2^depth = {step}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")

    @classmethod
    def desk(cls, **overrides) -> "StudentConfig":
        """~100k-parameter preset for phantom-scale experiments on a CPU."""
        base = dict(base_filters=3, param_budget=100_000, patch_size=(32, 32, 32), epochs=20)
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_size"] = list(self.patch_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudentConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _conv(cin, cout):
    return [nn.Conv3d(cin, cout, 3, padding=1), nn.InstanceNorm3d(cout, affine=True),
            nn.LeakyReLU(0.01)]


class UNet3D(nn.Module):
    """3D U-Net in the Cicek et al. layout: each encoder block doubles its width on
    the second convolution, and transposed convolutions upsample."""

    def __init__(self, in_channels: int = 2, depth: int = 3, base_filters: int = 16):
        super().__init__()
        self.in_channels = in_channels
        self.depth = depth
        self.enc = nn.ModuleList()
        prev = in_channels
        for i in range(depth):
            c = base_filters * 2 ** i
            self.enc.append(nn.Sequential(*_conv(prev, c), *_conv(c, 2 * c)))
            prev = 2 * c
        c = base_filters * 2 ** depth
        self.bottom = nn.Sequential(*_conv(prev, c), *_conv(c, 2 * c))
        prev = 2 * c
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(depth)):
            skip = base_filters * 2 ** (i + 1)
            self.up.append(nn.ConvTranspose3d(prev, prev, 2, stride=2))
            self.dec.append(nn.Sequential(*_conv(prev + skip, skip), *_conv(skip, skip)))
            prev = skip
        self.head = nn.Conv3d(prev, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = F.max_pool3d(x, 2)
        x = self.bottom(x)
        for up, block in zip(self.up, self.dec):
            x = block(torch.cat([up(x), skips.pop()], dim=1))
        return torch.sigmoid(self.head(x))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_student(config: StudentConfig) -> UNet3D:
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        model = UNet3D(config.in_channels, config.depth, config.base_filters)
    n = count_parameters(model)
    if config.param_budget is not None:
        lo, hi = config.param_budget / 2, config.param_budget * 2
        if not lo <= n <= hi:
            raise ValueError(f"{n} parameters outside 2x of the {config.param_budget} budget")
    log.info("student: %d parameters", n)
    return model


# -- history / checkpoints ------------------------------------------------------

HISTORY_FIELDS = ("epoch", "train_loss", "train_dice", "train_vol_acc",
                  "val_loss", "val_dice", "val_vol_acc")


@dataclass
class TrainingHistory:
    rows: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list[float]:
        return [r[name] for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def save_checkpoint(path, model: UNet3D, config: StudentConfig, history: TrainingHistory | None = None,
                    state: dict | None = None) -> None:
    torch.save({"config": config.to_dict(), "model": model.state_dict(),
                "history": history.rows if history else [], "state": state or {}}, path)


def load_checkpoint(path) -> tuple[UNet3D, StudentConfig, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = StudentConfig.from_dict(payload["config"])
    model = UNet3D(config.in_channels, config.depth, config.base_filters)
    model.load_state_dict(payload["model"])
    return model, config, payload


# -- training -----------------------------------------------------------------

def _pad_to(a: np.ndarray, shape, value: float = 0.0) -> np.ndarray:
    spatial = a.shape[-3:]
    pad = [(0, max(0, s - n)) for n, s in zip(spatial, shape)]
    if not any(p[1] for p in pad):
        return a
    return np.pad(a, [(0, 0)] * (a.ndim - 3) + pad, constant_values=value)


def _vol_acc(pred_count: float, true_count: float) -> float:
    if true_count == 0:
        return 1.0 if pred_count == 0 else 0.0
    return max(0.0, 1.0 - abs(pred_count - true_count) / true_count)


class _Prepared:
    """Padded arrays for one training sample, label SDM computed once."""

    def __init__(self, s: TrainingSample, patch, band):
        self.x = _pad_to(s.channels, patch)
        self.y = _pad_to(s.label[None].astype(np.float32), patch)
        self.d = _pad_to(normalized_sdm(s.label, band)[None], patch, value=-1.0)

    def crop(self, patch, rng):
        starts = [int(rng.integers(0, n - p + 1)) for n, p in zip(self.y.shape[1:], patch)]
        sl = (slice(None),) + tuple(slice(a, a + p) for a, p in zip(starts, patch))
        return self.x[sl], self.y[sl], self.d[sl]


def _loss(prob, y, d, config: StudentConfig):
    l1 = dice_loss(prob, y)
    l2 = boundary_loss(prob, d)
    return dynamic_loss(l1, l2, config.loss_offset, config.loss_temperature, config.hard_switch)


def train(model: UNet3D, train_set: list[TrainingSample], config: StudentConfig,
          val_set: list[TrainingSample] | None = None, resume: dict | None = None,
          on_epoch=None) -> tuple[UNet3D, TrainingHistory]:
    """Optimize the dynamic loss on random patches; keep the best-validation weights.

    ``on_epoch(model, history, state)`` runs after every epoch; ``state`` is what
    ``resume`` accepts to continue an interrupted run.
    """
    if not train_set:
        raise ValueError("empty training set")
    for s in train_set + list(val_set or []):
        if s.n_channels != model.in_channels:
            raise ValueError(f"sample {s.subject_id} has {s.n_channels} channels, "
                             f"model expects {model.in_channels}")
    patch = config.patch_size
    prepared = [_Prepared(s, patch, config.band) for s in train_set]
    val_sdm = [torch.from_numpy(normalized_sdm(s.label, config.band)) for s in val_set or []]

    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = TrainingHistory()
    best_dice, best_state, start = -1.0, None, 0
    if resume:
        opt.load_state_dict(resume["optimizer"])
        rng.bit_generator.state = resume["rng"]
        history = TrainingHistory(list(resume["history"]))
        best_dice, best_state, start = resume["best_dice"], resume["best_model"], resume["epoch"]

    for epoch in range(start, config.epochs):
        model.train()
        order = rng.permutation(len(prepared))
        tot_loss, tot_n, inter, psum, tsum = 0.0, 0, 0.0, 0.0, 0.0
        for b in range(0, len(order), config.batch_size):
            crops = [prepared[i].crop(patch, rng) for i in order[b:b + config.batch_size]]
            x, y, d = (torch.from_numpy(np.stack(c)) for c in zip(*crops))
            prob = model(x)
            loss = _loss(prob, y, d, config)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch {b // config.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                hard = (prob >= 0.5).float()
                inter += float((hard * y).sum())
                psum += float(hard.sum())
                tsum += float(y.sum())
            tot_loss += loss.item() * len(crops)
            tot_n += len(crops)
        row = {"epoch": epoch, "train_loss": tot_loss / tot_n,
               "train_dice": 2 * inter / (psum + tsum) if psum + tsum else 1.0,
               "train_vol_acc": _vol_acc(psum, tsum),
               "val_loss": float("nan"), "val_dice": float("nan"), "val_vol_acc": float("nan")}
        if val_set:
            row.update(evaluate(model, val_set, config, val_sdm))
            score = row["val_dice"]
        else:
            score = row["train_dice"]
        if score > best_dice:
            best_dice, best_state = score, copy.deepcopy(model.state_dict())
        history.rows.append(row)
        log.info("epoch %d loss %.4f dice %.4f val_dice %.4f val_vol_acc %.4f", epoch,
                 row["train_loss"], row["train_dice"], row["val_dice"], row["val_vol_acc"])
        # deep copy: optimizer tensors are updated in place by later steps
        state = {"optimizer": copy.deepcopy(opt.state_dict()), "rng": rng.bit_generator.state,
                 "history": list(history.rows), "best_dice": best_dice,
                 "best_model": best_state, "epoch": epoch + 1}
        if on_epoch is not None:
            on_epoch(model, history, state)

    model.load_state_dict(best_state)
    return model, history


def evaluate(model: UNet3D, samples: list[TrainingSample], config: StudentConfig,
             sdms: list[torch.Tensor] | None = None) -> dict:
    losses, dices, accs = [], [], []
    for i, s in enumerate(samples):
        pred = predict(model, s.channels, config.patch_size, config.overlap, s.spacing)
        prob = torch.from_numpy(pred.prob.data)
        y = torch.from_numpy(s.label.astype(np.float32))
        d = sdms[i] if sdms else torch.from_numpy(normalized_sdm(s.label, config.band))
        losses.append(float(_loss(prob, y, d, config)))
        m, t = pred.mask.data.astype(bool), s.label.astype(bool)
        denom = m.sum() + t.sum()
        dices.append(2 * (m & t).sum() / denom if denom else 1.0)
        accs.append(_vol_acc(m.sum(), t.sum()))
    return {"val_loss": float(np.mean(losses)), "val_dice": float(np.mean(dices)),
            "val_vol_acc": float(np.mean(accs))}


# -- inference ----------------------------------------------------------------

@dataclass
class Prediction:
    prob: Volume3D
    mask: LabelVolume


def _starts(n: int, p: int, step: int) -> list[int]:
    s = list(range(0, n - p + 1, step))
    if s[-1] != n - p:
        s.append(n - p)
    return s


@torch.no_grad()
def predict(model: UNet3D, channels: np.ndarray, patch_size=None, overlap: float = 0.5,
            spacing=(1.0, 1.0, 1.0)) -> Prediction:
    """Sliding-window probabilities averaged over overlapping patches."""
    channels = np.asarray(channels, dtype=np.float32)
    if channels.ndim != 4 or channels.shape[0] != model.in_channels:
        raise ValueError(f"expected ({model.in_channels}, X, Y, Z) channels, got {channels.shape}")
    shape = channels.shape[1:]
    patch = _triple(patch_size) if patch_size is not None else shape
    x = _pad_to(channels, patch)
    padded = x.shape[1:]
    acc = np.zeros(padded, dtype=np.float64)
    cnt = np.zeros(padded, dtype=np.float64)
    steps = [max(1, int(p * (1 - overlap))) for p in patch]
    model.eval()
    for a in _starts(padded[0], patch[0], steps[0]):
        for b in _starts(padded[1], patch[1], steps[1]):
            for c in _starts(padded[2], patch[2], steps[2]):
                sl = (slice(a, a + patch[0]), slice(b, b + patch[1]), slice(c, c + patch[2]))
                out = model(torch.from_numpy(x[(slice(None),) + sl][None]))
                acc[sl] += out[0, 0].double().numpy()
                cnt[sl] += 1
    prob = (acc / cnt)[: shape[0], : shape[1], : shape[2]].astype(np.float32)
    return Prediction(Volume3D(prob, spacing), LabelVolume(prob >= 0.5, spacing))
