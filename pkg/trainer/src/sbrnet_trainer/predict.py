"""Full-frame inference writing prediction stacks for the evaluator."""

from __future__ import annotations

from pathlib import Path

import torch

from . import stackio
from .data import SampleSet, full_frame
from .stabilize import stabilize
from .train import load_checkpoint


@torch.no_grad()
def predict(manifest_path, checkpoint_path, out_dir, split: str = "all", device: str | None = None) -> list[Path]:
    """Run the whole frame through the network (no patching) per sample.

    Prediction stacks reuse the sample's ground-truth volume geometry header
    so the evaluator can map voxels back to micrometers.
    """
    device = device or ("cuda" if torch.cuda.is_available() else "cpu")
    model, cfg = load_checkpoint(checkpoint_path, device)
    samples = SampleSet(manifest_path, split)
    if samples.volume_slices != model.spec.volume_slices:
        raise ValueError(
            f"checkpoint emits {model.spec.volume_slices} slices but data has {samples.volume_slices}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sample in samples.samples:
        views, refocus, _ = full_frame(sample)
        views = stabilize(views.unsqueeze(0), cfg.stabilize_mode).to(device)
        refocus = stabilize(refocus.unsqueeze(0), cfg.stabilize_mode).to(device)
        pred = model(views, refocus)[0].cpu().numpy()
        header = {
            k: sample.volume_header[k]
            for k in ("axes", "pixel_pitch_um", "z0_um", "dz_um", "x0_um", "y0_um")
            if k in sample.volume_header
        }
        path = out_dir / f"{sample.sample_id}_pred.sbrb"
        stackio.write_stack(path, pred, header)
        written.append(path)
        print(f"event=predict id={sample.sample_id} out={path}", flush=True)
    return written
