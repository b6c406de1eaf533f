"""Classical background removal (the non-learned descattering baseline).

Default is subtraction of a grey morphological opening with a disk element
sized to pass bead images and reject the smoother background; a Gaussian
high-pass mode is kept so sensitivity to this choice can be measured.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage as ndi

from .scatter import Measurement

MORPHOLOGICAL = "morphological_open"
HIGHPASS = "gaussian_highpass"


@dataclass(frozen=True)
class BgrParams:
    structuring_radius_px: int = 15
    mode: str = MORPHOLOGICAL

    def __post_init__(self):
        if self.structuring_radius_px < 1:
            raise ValueError("structuring_radius_px must be >= 1")
        if self.mode not in (MORPHOLOGICAL, HIGHPASS):
            raise ValueError(f"unknown mode {self.mode!r}")


def disk_footprint(radius: int) -> np.ndarray:
    y, x = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return x * x + y * y <= radius * radius


def remove_background(m: Measurement | np.ndarray, params: BgrParams) -> Measurement | np.ndarray:
    img = m.data if isinstance(m, Measurement) else np.asarray(m, dtype=np.float64)
    if params.mode == MORPHOLOGICAL:
        background = ndi.grey_opening(img, footprint=disk_footprint(params.structuring_radius_px), mode="nearest")
    else:
        background = ndi.gaussian_filter(img, params.structuring_radius_px, mode="nearest")
    out = np.maximum(img - background, 0.0)
    if isinstance(m, Measurement):
        meta = replace(m.meta)
        return Measurement(out, m.kind, meta, pixel_pitch_um=m.pixel_pitch_um)
    return out
