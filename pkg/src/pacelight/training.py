"""Loss, optimizer, augmentation, schedules, and the training loop."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .dataio import Dataset
from .errors import (
    EmptyDataset,
    IncompatibleSamples,
    ShapeMismatch,
    ZeroTargetNorm,
)
from .fields import SimulationInstance
from .model import (
    CascadeModel,
    PaceModel,
    apply_parameters,
    load_checkpoint,
    save_checkpoint,
)

REPORT_FILE = "report.csv"
LAST_CHECKPOINT = "last.npz"
BEST_CHECKPOINT = "best.npz"
OPTIMIZER_FILE = "optimizer_last.npz"
REPORT_COLUMNS = ["epoch", "lr", "train_nmse", "val_nmse",
                  "train_loss_one", "train_loss_two"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    base_lr: float = 2e-3
    weight_decay: float = 1e-5
    batch_size: int = 4
    seed: int = 0
    mixup_enabled: bool = True
    lr_floor: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.base_lr <= 0 or self.batch_size < 1:
            raise ValueError("epochs, base_lr, and batch_size must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def nmse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample squared-L2 error over squared target norm, batch mean."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    diff = (pred - target).abs() ** 2
    norm = target.abs() ** 2
    dims = tuple(range(1, pred.dim()))
    denom = norm.sum(dim=dims)
    if torch.any(denom == 0):
        raise ZeroTargetNorm("target has zero norm")
    return (diff.sum(dim=dims) / denom).mean()


def l1_complex_distance(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """Sum of |Re diff| + |Im diff|; rotation-variant, diagnostic only."""
    if z1.shape != z2.shape:
        raise ShapeMismatch("shapes must match")
    d = z1 - z2
    return d.real.abs().sum() + d.imag.abs().sum()


def cosine_lr(step: int, total_steps: int, base_lr: float, floor: float = 0.0) -> float:
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside 0..{total_steps}")
    return floor + (base_lr - floor) * 0.5 * (1 + math.cos(math.pi * step / total_steps))


def adamw_init_state(params: dict[str, torch.Tensor]) -> dict:
    def zeros(p):
        z = torch.zeros_like(p)
        return torch.view_as_real(z) if z.is_complex() else z

    return {"step": 0,
            "m": {k: zeros(p) for k, p in params.items()},
            "v": {k: zeros(p) for k, p in params.items()}}


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
               state: dict, lr: float, weight_decay: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update; complex parameters are updated
    coordinate-wise on their real view."""
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape mismatch for {name}")
        pv = torch.view_as_real(p.data) if p.is_complex() else p.data
        gv = torch.view_as_real(g) if g.is_complex() else g
        m, v = state["m"][name], state["v"][name]
        m.mul_(b1).add_(gv, alpha=1 - b1)
        v.mul_(b2).addcmul_(gv, gv, value=1 - b2)
        if weight_decay:
            pv.mul_(1 - lr * weight_decay)
        denom = v.sqrt().div_(math.sqrt(bc2)).add_(eps)
        pv.addcdiv_(m, denom, value=-lr / bc1)


def mixup_superpose(samples: Sequence[SimulationInstance],
                    weights: Sequence[complex]) -> SimulationInstance:
    """Superpose same-device samples: sources and targets take the weighted
    sum, permittivity and priors are untouched (valid by PDE linearity)."""
    if len(samples) != len(weights) or not samples:
        raise IncompatibleSamples("need one weight per sample")
    if all(w == 0 for w in weights):
        raise IncompatibleSamples("weights must not all be zero")
    first = samples[0]
    for s in samples[1:]:
        if s.domain != first.domain or s.wavelength != first.wavelength:
            raise IncompatibleSamples("samples must share domain and wavelength")
        if not np.array_equal(s.eps, first.eps):
            raise IncompatibleSamples("samples must come from the same device")
        if s.target is None or first.target is None:
            raise IncompatibleSamples("samples must carry targets")
    source = sum(w * s.source_field for w, s in zip(weights, samples))
    target = sum(w * s.target for w, s in zip(weights, samples))
    return SimulationInstance(
        domain=first.domain, eps=first.eps, source_field=source,
        prior_x=first.prior_x, prior_z=first.prior_z,
        wavelength=first.wavelength, target=target)


@dataclass(frozen=True)
class NormStats:
    eps_min: float
    eps_max: float
    source_rms: float
    field_rms: float

    @staticmethod
    def from_manifest(stats: dict) -> "NormStats":
        return NormStats(
            eps_min=stats.get("eps_min", 0.0),
            eps_max=stats.get("eps_max", 12.11),
            source_rms=stats.get("source_rms", 1.0) or 1.0,
            field_rms=stats.get("field_rms", 1.0) or 1.0,
        )


def encode_instance(inst: SimulationInstance, stats: NormStats) -> np.ndarray:
    """Stage-I input channels: [eps re/im (normalized), source re/im,
    prior_x re/im, prior_z re/im]."""
    span = stats.eps_max - stats.eps_min or 1.0
    eps_n = (np.real(inst.eps) - stats.eps_min) / span
    src = inst.source_field / stats.source_rms
    return np.stack([
        eps_n, np.zeros_like(eps_n),
        np.real(src), np.imag(src),
        np.real(inst.prior_x), np.imag(inst.prior_x),
        np.real(inst.prior_z), np.imag(inst.prior_z),
    ]).astype(np.float64)


def encode_batch(instances: Sequence[SimulationInstance], stats: NormStats,
                 dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([encode_instance(i, stats) for i in instances]))
    y = torch.from_numpy(np.stack([i.target / stats.field_rms for i in instances]))
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return x.to(dtype), y.to(cdtype)


def _model_dtype(model: torch.nn.Module) -> torch.dtype:
    for p in model.parameters():
        if not p.is_complex():
            return p.dtype
    return torch.float32


def _device_key(record_id: str) -> str:
    return record_id.split("_")[0]


def _load_report(path: Path) -> list[dict]:
    rows = []
    with open(path) as f:
        for row in csv.DictReader(f):
            rows.append(row)
    return rows


def _write_report(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in REPORT_COLUMNS})


def _save_optimizer(path: Path, state: dict) -> None:
    payload = {"step": np.array(state["step"])}
    for k, t in state["m"].items():
        payload[f"m/{k}"] = t.numpy()
    for k, t in state["v"].items():
        payload[f"v/{k}"] = t.numpy()
    with open(path, "wb") as f:
        np.savez(f, **payload)


def _load_optimizer(path: Path, params: dict[str, torch.Tensor]) -> dict:
    with np.load(path, allow_pickle=False) as data:
        state = {"step": int(data["step"]),
                 "m": {k: torch.from_numpy(data[f"m/{k}"].copy()) for k in params},
                 "v": {k: torch.from_numpy(data[f"v/{k}"].copy()) for k in params}}
    return state


def forward_loss(model: torch.nn.Module, x: torch.Tensor, y: torch.Tensor,
                 generator: torch.Generator | None = None
                 ) -> tuple[torch.Tensor, dict[str, float]]:
    """Single-stage loss, or the sum of both stage losses for a cascade."""
    if isinstance(model, CascadeModel):
        pred_one, pred_two = model(x, generator=generator)
        loss_one = nmse_loss(pred_one, y)
        loss_two = nmse_loss(pred_two, y)
        loss = loss_one + loss_two
        return loss, {"loss_one": float(loss_one.detach()),
                      "loss_two": float(loss_two.detach()),
                      "nmse": float(loss_two.detach())}
    pred = model(x, generator=generator)
    loss = nmse_loss(pred, y)
    val = float(loss.detach())
    return loss, {"loss_one": val, "loss_two": float("nan"), "nmse": val}


def predict(model: torch.nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Final field prediction (stage-II output for cascades)."""
    if isinstance(model, CascadeModel):
        return model(x)[1]
    return model(x)


def evaluate(dataset: Dataset, split: str, model: Callable[[torch.Tensor], torch.Tensor],
             stats: Optional[NormStats] = None,
             dtype: torch.dtype = torch.float32) -> tuple[float, list[tuple[str, float]]]:
    """Mean per-sample N-MSE over a split, no augmentation."""
    ids = dataset.ids(split)
    if not ids:
        raise EmptyDataset(f"split {split!r} is empty")
    if stats is None:
        stats = NormStats.from_manifest(dataset.manifest.stats)
    if isinstance(model, torch.nn.Module):
        model.eval()
        fn = lambda x: predict(model, x)
        dtype = _model_dtype(model)
    else:
        fn = model
    per_sample = []
    with torch.no_grad():
        for rid in ids:
            x, y = encode_batch([dataset.instance(rid)], stats, dtype)
            per_sample.append((rid, float(nmse_loss(fn(x), y))))
    return float(np.mean([v for _, v in per_sample])), per_sample


def _make_batches(order: list[str], batch_size: int) -> list[list[str]]:
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def train(dataset: Dataset, model: torch.nn.Module, cfg: TrainConfig,
          out_dir: Optional[str] = None, config_json: Optional[dict] = None,
          trainable: Optional[set[str]] = None,
          resume: bool = True) -> list[dict]:
    """Train with AdamW + cosine decay; returns the per-epoch report rows.

    Deterministic under a fixed seed: per-epoch RNG streams are derived from
    (seed, epoch), so a killed run resumed from the last checkpoint replays
    the remaining epochs identically.
    """
    if cfg.deterministic:
        torch.set_num_threads(1)
    train_ids = dataset.ids("train")
    val_ids = dataset.ids("val")
    if not train_ids:
        raise EmptyDataset("no training records")
    stats = NormStats.from_manifest(dataset.manifest.stats)
    dtype = _model_dtype(model)

    all_params = dict(model.named_parameters())
    if trainable is None:
        params = {k: p for k, p in all_params.items() if p.requires_grad}
    else:
        params = {k: all_params[k] for k in sorted(trainable)}
    state = adamw_init_state(params)
    if config_json is None:
        config_json = model.config.to_json()

    out = Path(out_dir) if out_dir else None
    rows: list[dict] = []
    start_epoch = 0
    if out:
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / REPORT_FILE
        if resume and (out / LAST_CHECKPOINT).exists():
            meta, saved = load_checkpoint(out / LAST_CHECKPOINT)
            apply_parameters(model, saved)
            start_epoch = int(meta["extra"]["epoch"]) + 1
            state = _load_optimizer(out / OPTIMIZER_FILE, params)
            if report_path.exists():
                rows = _load_report(report_path)[:start_epoch]

    by_device: dict[str, list[str]] = {}
    for rid in train_ids:
        by_device.setdefault(_device_key(rid), []).append(rid)

    steps_per_epoch = math.ceil(len(train_ids) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    best_val = min((float(r["val_nmse"]) for r in rows), default=float("inf"))

    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 1000 + epoch])
        gen = torch.Generator().manual_seed(cfg.seed * 100_003 + epoch)
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        model.train()
        losses, losses_one, losses_two = [], [], []
        lr = cfg.base_lr
        for step, batch_ids in enumerate(_make_batches(order, cfg.batch_size)):
            instances = []
            for rid in batch_ids:
                inst = dataset.instance(rid)
                peers = [p for p in by_device.get(_device_key(rid), []) if p != rid]
                if cfg.mixup_enabled and peers and rng.random() < 0.5:
                    other = dataset.instance(peers[rng.integers(len(peers))])
                    phases = rng.uniform(0, 2 * np.pi, size=2)
                    weights = np.exp(1j * phases)
                    inst = mixup_superpose([inst, other], list(weights))
                instances.append(inst)
            x, y = encode_batch(instances, stats, dtype)
            loss, parts = forward_loss(model, x, y, generator=gen)
            for p in params.values():
                p.grad = None
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p))
                     for k, p in params.items()}
            lr = cosine_lr(epoch * steps_per_epoch + step, total_steps,
                           cfg.base_lr, cfg.lr_floor)
            adamw_step(params, grads, state, lr, cfg.weight_decay,
                       betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
            losses.append(parts["nmse"])
            losses_one.append(parts["loss_one"])
            losses_two.append(parts["loss_two"])

        if val_ids:
            val_nmse, _ = evaluate(dataset, "val", model, stats)
        else:
            val_nmse = float("nan")
        row = {
            "epoch": str(epoch),
            "lr": f"{lr:.10g}",
            "train_nmse": f"{float(np.mean(losses)):.10g}",
            "val_nmse": f"{val_nmse:.10g}",
            "train_loss_one": f"{float(np.mean(losses_one)):.10g}",
            "train_loss_two": (f"{float(np.nanmean(losses_two)):.10g}"
                               if not all(math.isnan(v) for v in losses_two)
                               else "nan"),
        }
        rows.append(row)

        if out:
            save_checkpoint(out / LAST_CHECKPOINT, model, config_json,
                            extra={"epoch": epoch, "train_config": cfg.to_json()})
            _save_optimizer(out / OPTIMIZER_FILE, state)
            if val_nmse <= best_val or not (out / BEST_CHECKPOINT).exists():
                best_val = min(best_val, val_nmse)
                save_checkpoint(out / BEST_CHECKPOINT, model, config_json,
                                extra={"epoch": epoch, "val_nmse": val_nmse})
            _write_report(out / REPORT_FILE, rows)
    return rows


def train_sequential(dataset: Dataset, cascade: CascadeModel, cfg: TrainConfig,
                     out_dir: Optional[str] = None) -> list[dict]:
    """Freeze stage-I and train only stage-II (and the distillation path)."""
    trainable = set()
    for name, p in cascade.named_parameters():
        if name.startswith("stage_one."):
            p.requires_grad_(False)
        else:
            trainable.add(name)
    return train(dataset, cascade, cfg, out_dir=out_dir,
                 config_json=cascade.config.to_json(), trainable=trainable)
