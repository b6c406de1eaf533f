"""Named configurations: a CI-sized desk preset and the full-scale preset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .optics import (
    DEFAULT_BETA,
    DEFAULT_KAPPA_PX_PER_UM,
    DEFAULT_SIGMA0_UM,
    SyntheticPsfParams,
    ViewGeometry,
    default_view_geometry,
)
from .scatter import BackgroundParams
from .volume import VOXEL_PITCH_XY_UM, VOXEL_PITCH_Z_UM, VolumeRecipe


@dataclass(frozen=True)
class Preset:
    name: str
    sensor_shape: tuple[int, int]
    view_size: int
    n_planes: int
    z_origin_um: float
    dz_um: float = VOXEL_PITCH_Z_UM
    fov_diameter_um: float = 2000.0
    sigma0_um: float = DEFAULT_SIGMA0_UM
    beta: float = DEFAULT_BETA
    kappa_px_per_um: float = DEFAULT_KAPPA_PX_PER_UM
    z_focus_um: float = 0.0
    bg_lattice_pitch_px: int = 25
    bg_canvas_px: int = 600

    def z_planes_um(self) -> np.ndarray:
        return self.z_origin_um + self.dz_um * np.arange(self.n_planes)

    def geometry(self) -> ViewGeometry:
        return default_view_geometry(self.sensor_shape, self.view_size, self.kappa_px_per_um)

    def psf_params(self) -> SyntheticPsfParams:
        return SyntheticPsfParams(
            sigma0_um=self.sigma0_um,
            beta=self.beta,
            kappa_px_per_um=self.kappa_px_per_um,
            z_focus_um=self.z_focus_um,
        )

    def recipe(self, seed: int = 0, **overrides) -> VolumeRecipe:
        base = VolumeRecipe(
            seed=seed,
            grid_shape=(self.n_planes, self.view_size, self.view_size),
            fov_diameter_um=self.fov_diameter_um,
            z_origin_um=self.z_origin_um,
            voxel_pitch_um=(self.dz_um, VOXEL_PITCH_XY_UM, VOXEL_PITCH_XY_UM),
        )
        return replace(base, **overrides) if overrides else base

    def bg_params(self, shared: bool = False) -> BackgroundParams:
        return BackgroundParams(
            lattice_pitch_px=self.bg_lattice_pitch_px,
            canvas_px=self.bg_canvas_px,
            shared=shared,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# 3x3 views of 128 px on a 384x384 sensor, 8 planes: small enough for CI
DESK = Preset(
    name="desk",
    sensor_shape=(384, 384),
    view_size=128,
    n_planes=8,
    z_origin_um=-75.0,
    fov_diameter_um=480.0,
)

# full-scale dimensions: 2076x3088 sensor, 512-px views, 24 planes over
# z = -200..375 um (the 25-plane measured range minus its shallowest plane)
PAPER = Preset(
    name="paper",
    sensor_shape=(2076, 3088),
    view_size=512,
    n_planes=24,
    z_origin_um=-200.0,
    fov_diameter_um=2000.0,
)

PRESETS = {"desk": DESK, "paper": PAPER}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
