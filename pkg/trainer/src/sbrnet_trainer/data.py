"""Dataset access over the simulator's manifest + stack contract."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import stackio

A_MEAN = 1.49e-4
A_STD = 0.57e-4
B_MEAN = 5.41e-6
B_STD = 2.78e-6


class DataContractError(Exception):
    pass


@dataclass
class Sample:
    sample_id: str
    views: np.ndarray  # (9, H, W) float32
    refocus: np.ndarray  # (nz, H, W) float32
    target: np.ndarray  # (nz, H, W) float32
    volume_header: dict


class SampleSet:
    """In-memory split of a manifest; desk-scale data is a few MB per sample."""

    def __init__(self, manifest_path: str | Path, split: str | None = None):
        records, root = stackio.load_manifest(manifest_path)
        if split and split != "all":
            records = [r for r in records if r.get("split") == split]
        if not records:
            raise DataContractError(f"no records for split {split!r} in {manifest_path}")
        self.samples: list[Sample] = []
        for rec in records:
            sid = rec["id"]
            try:
                views, _ = stackio.read_stack(root / rec["views_path"])
                refocus, _ = stackio.read_stack(root / rec["refocus_path"])
                target, vol_header = stackio.read_stack(root / rec["volume_path"])
            except (OSError, stackio.StackFormatError) as e:
                raise DataContractError(f"sample {sid}: {e}") from e
            if views.shape[0] != 9:
                raise DataContractError(f"sample {sid}: expected 9 views, got {views.shape}")
            if refocus.shape != target.shape:
                raise DataContractError(
                    f"sample {sid}: refocus {refocus.shape} vs volume {target.shape}"
                )
            self.samples.append(Sample(sid, views, refocus, target, vol_header))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def volume_slices(self) -> int:
        return self.samples[0].target.shape[0]

    @property
    def frame_px(self) -> tuple[int, int]:
        return self.samples[0].target.shape[1:]


def random_patch(sample: Sample, patch: int, rng: np.random.Generator):
    h, w = sample.target.shape[1:]
    if patch > h or patch > w:
        raise DataContractError(f"patch {patch} exceeds frame {h}x{w}")
    r = int(rng.integers(0, h - patch + 1))
    c = int(rng.integers(0, w - patch + 1))
    sl = (slice(None), slice(r, r + patch), slice(c, c + patch))
    return (
        torch.from_numpy(sample.views[sl].copy()),
        torch.from_numpy(sample.refocus[sl].copy()),
        torch.from_numpy(sample.target[sl].copy()),
    )


def full_frame(sample: Sample):
    return (
        torch.from_numpy(sample.views.copy()),
        torch.from_numpy(sample.refocus.copy()),
        torch.from_numpy(sample.target.copy()),
    )


class OnlineMpgNoise:
    """Per-call mixed Poisson-Gaussian noise with resampled (a, b).

    Matches the sensor model f = g + sqrt(a*g + b) * xi, treating each input
    tensor as signal; the refocused stack is an average of 9 views, so its
    noise standard deviation is divided by 3.
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def _draw(self, mean: float, std: float) -> float:
        v = self.rng.normal(mean, std)
        while v <= 0:
            v = self.rng.normal(mean, std)
        return float(v)

    def __call__(self, views: torch.Tensor, refocus: torch.Tensor):
        a = self._draw(A_MEAN, A_STD)
        b = self._draw(B_MEAN, B_STD)
        noise_v = torch.from_numpy(
            self.rng.standard_normal(tuple(views.shape)).astype(np.float32)
        )
        noise_r = torch.from_numpy(
            self.rng.standard_normal(tuple(refocus.shape)).astype(np.float32)
        )
        views = views + torch.sqrt(torch.clamp(a * views + b, min=0.0)) * noise_v
        refocus = refocus + torch.sqrt(torch.clamp(a * refocus + b, min=0.0)) / 3.0 * noise_r
        return views, refocus
