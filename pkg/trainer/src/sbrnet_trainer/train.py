"""Training loop: Adam + cosine annealing, online noise, patch sampling."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import OnlineMpgNoise, SampleSet, full_frame, random_patch
from .model import DESK_SPEC, PAPER_SPEC, NetworkSpec, SbrNet, cross_entropy_loss
from .stabilize import stabilize


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 12
    patch_px: int = 224
    lr: float = 1e-3
    cosine_period_epochs: int = 30
    stabilize_mode: str = "anscombe"
    online_noise: bool = True  # off for the free-space / background-removed variants
    binarize_targets: bool = False
    seed: int = 0
    amp: bool = False  # mixed 16-bit; enabled automatically on CUDA
    log_every: int = 0

    def for_preset(name: str, **overrides) -> "TrainConfig":  # noqa: N805
        base = {"desk": {"batch_size": 8, "patch_px": 64}, "paper": {}}[name]
        base.update(overrides)
        return TrainConfig(**base)


def spec_for_preset(name: str, fusion: str = "concat", volume_slices: int | None = None) -> NetworkSpec:
    spec = {"desk": DESK_SPEC, "paper": PAPER_SPEC}[name]
    slices = volume_slices if volume_slices is not None else spec.volume_slices
    return NetworkSpec(
        view_channels=spec.view_channels, volume_slices=slices, width=spec.width,
        blocks=spec.blocks, fusion=fusion,
    )


def _prepare(views, refocus, target, cfg: TrainConfig, noise: OnlineMpgNoise | None):
    if noise is not None:
        views, refocus = noise(views, refocus)
    views = stabilize(views, cfg.stabilize_mode)
    refocus = stabilize(refocus, cfg.stabilize_mode)
    if cfg.binarize_targets:
        target = (target > 0).to(target.dtype)
    return views, refocus, target


def train(
    manifest_path,
    out_dir,
    spec: NetworkSpec,
    cfg: TrainConfig,
    device: str | None = None,
) -> Path:
    """Train on the manifest's train split, validate on val; returns the
    checkpoint path.  Deterministic given cfg.seed."""
    device = device or ("cuda" if torch.cuda.is_available() else "cpu")
    torch.manual_seed(cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = SampleSet(manifest_path, "train")
    try:
        val_set = SampleSet(manifest_path, "val")
    except Exception:
        val_set = None
    if train_set.volume_slices != spec.volume_slices:
        raise ValueError(
            f"network emits {spec.volume_slices} slices but data has {train_set.volume_slices}"
        )

    model = SbrNet(spec).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    # cosine annealing with warm restarts at the configured period
    scheduler = torch.optim.lr_scheduler.CosineAnnealingWarmRestarts(
        optimizer, T_0=cfg.cosine_period_epochs
    )
    use_amp = cfg.amp and device == "cuda"
    scaler = torch.amp.GradScaler(enabled=use_amp)
    noise = OnlineMpgNoise(seed=cfg.seed + 1) if cfg.online_noise else None
    patch_rng = np.random.default_rng(cfg.seed + 2)
    order_rng = np.random.default_rng(cfg.seed + 3)

    history = []
    best_val = float("inf")
    checkpoint_path = out_dir / "checkpoint.pt"
    for epoch in range(cfg.epochs):
        model.train()
        order = order_rng.permutation(len(train_set))
        losses = []
        start = time.time()
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            tensors = [random_patch(train_set.samples[i], cfg.patch_px, patch_rng) for i in idx]
            views = torch.stack([t[0] for t in tensors]).to(device)
            refocus = torch.stack([t[1] for t in tensors]).to(device)
            target = torch.stack([t[2] for t in tensors]).to(device)
            views, refocus, target = _prepare(views, refocus, target, cfg, noise)
            optimizer.zero_grad(set_to_none=True)
            with torch.autocast(device_type=device, enabled=use_amp):
                pred = model(views, refocus)
                loss = cross_entropy_loss(pred, target)
            scaler.scale(loss).backward()
            scaler.step(optimizer)
            scaler.update()
            losses.append(float(loss.detach()))
        scheduler.step()

        val_loss = None
        if val_set is not None:
            val_loss = evaluate_loss(model, val_set, cfg, device)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "lr": scheduler.get_last_lr()[0],
            "seconds": round(time.time() - start, 2),
        }
        history.append(row)
        print(
            f"event=epoch epoch={epoch} train_loss={row['train_loss']:.5f} "
            f"val_loss={val_loss if val_loss is None else f'{val_loss:.5f}'} "
            f"lr={row['lr']:.2e} seconds={row['seconds']}",
            flush=True,
        )
        payload = {
            "state_dict": model.state_dict(),
            "spec": asdict(spec),
            "config": asdict(cfg),
            "epoch": epoch,
            "val_loss": val_loss,
        }
        torch.save(payload, checkpoint_path)
        if val_loss is not None and val_loss < best_val:
            best_val = val_loss
            torch.save(payload, out_dir / "checkpoint-best.pt")

    with open(out_dir / "losses.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss", "lr", "seconds"])
        w.writeheader()
        w.writerows(history)
    with open(out_dir / "train_config.json", "w", encoding="utf-8") as f:
        json.dump({"spec": asdict(spec), "config": asdict(cfg)}, f, indent=2)
    return checkpoint_path


@torch.no_grad()
def evaluate_loss(model: SbrNet, samples: SampleSet, cfg: TrainConfig, device: str) -> float:
    """Full-frame loss, no online noise."""
    model.eval()
    losses = []
    for sample in samples.samples:
        views, refocus, target = full_frame(sample)
        views, refocus, target = _prepare(
            views.unsqueeze(0), refocus.unsqueeze(0), target.unsqueeze(0), cfg, None
        )
        pred = model(views.to(device), refocus.to(device))
        losses.append(float(cross_entropy_loss(pred, target.to(device))))
    return float(np.mean(losses))


def load_checkpoint(path, device: str = "cpu") -> tuple[SbrNet, TrainConfig]:
    payload = torch.load(path, map_location=device, weights_only=False)
    spec = NetworkSpec(**payload["spec"])
    model = SbrNet(spec).to(device)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, TrainConfig(**payload["config"])
