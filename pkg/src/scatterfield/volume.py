"""Random fluorescent bead volumes with paired ground-truth emitter lists.

Volumes live on a coarse grid with 4.15 x 4.15 x 25 um voxels (one lateral
voxel per sensor pixel).  Beads are rasterized as solid spheres on a 5x
finer grid (0.83 x 0.83 x 5 um) and 5x5x5 mean-pooled down, so partial
voxels carry fractional intensity.  Overlapping spheres combine by maximum
on the fine grid, which keeps every voxel within (0, 1] and therefore valid
as a cross-entropy target.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stackio

VOXEL_PITCH_XY_UM = 4.15
VOXEL_PITCH_Z_UM = 25.0
FINE_SUBDIV = 5


class InvalidRecipeError(ValueError):
    pass


class EmitterOutsideGridError(ValueError):
    def __init__(self, indices: list[int]):
        self.indices = indices
        super().__init__(f"emitters outside grid/FOV at indices {indices}")


@dataclass(frozen=True)
class Emitter:
    """A spherical fluorescent bead: center in object-space um, continuous."""

    x_um: float
    y_um: float
    z_um: float
    diameter_um: float
    brightness: float

    @property
    def radius_um(self) -> float:
        return 0.5 * self.diameter_um


@dataclass(frozen=True)
class VolumeRecipe:
    """Statistical recipe for one random bead volume.

    Densities are in emitters/mm^3; the emitter count is drawn once per
    volume from N(density_mean, density_std), floored at zero and scaled by
    the FOV-cylinder volume.  Diameters resample until >= 1 um; brightness
    is clamped into (0, 1].
    """

    seed: int = 0
    density_mean: float = 180.0
    density_std: float = 118.0
    diameter_mean_um: float = 15.0
    diameter_std_um: float = 2.0
    brightness_mean: float = 0.8
    brightness_std: float = 0.1
    grid_shape: tuple[int, int, int] = (24, 512, 512)
    fov_diameter_um: float = 2000.0
    z_origin_um: float = -200.0
    voxel_pitch_um: tuple[float, float, float] = (VOXEL_PITCH_Z_UM, VOXEL_PITCH_XY_UM, VOXEL_PITCH_XY_UM)

    def __post_init__(self):
        nz, ny, nx = self.grid_shape
        if nz <= 0 or ny <= 0 or nx <= 0:
            raise InvalidRecipeError(f"zero-volume grid {self.grid_shape}")
        if self.density_mean <= 0 or self.diameter_mean_um <= 0 or self.brightness_mean <= 0:
            raise InvalidRecipeError("means must be > 0")
        if min(self.density_std, self.diameter_std_um, self.brightness_std) < 0:
            raise InvalidRecipeError("stds must be >= 0")
        if self.fov_diameter_um <= 0:
            raise InvalidRecipeError("fov_diameter_um must be > 0")
        r = 0.5 * self.fov_diameter_um
        if r > min(-self.x_min_um, self.x_max_um) or r > min(-self.y_min_um, self.y_max_um):
            raise InvalidRecipeError(
                f"FOV diameter {self.fov_diameter_um} um does not fit the {ny}x{nx} grid"
            )

    # lateral coordinate of voxel index 0 (grid origin voxel is ny//2, nx//2)
    @property
    def x0_um(self) -> float:
        return -(self.grid_shape[2] // 2) * self.voxel_pitch_um[2]

    @property
    def y0_um(self) -> float:
        return -(self.grid_shape[1] // 2) * self.voxel_pitch_um[1]

    @property
    def x_min_um(self) -> float:
        return self.x0_um - 0.5 * self.voxel_pitch_um[2]

    @property
    def x_max_um(self) -> float:
        return self.x0_um + (self.grid_shape[2] - 0.5) * self.voxel_pitch_um[2]

    @property
    def y_min_um(self) -> float:
        return self.y0_um - 0.5 * self.voxel_pitch_um[1]

    @property
    def y_max_um(self) -> float:
        return self.y0_um + (self.grid_shape[1] - 0.5) * self.voxel_pitch_um[1]

    @property
    def z_slab_um(self) -> tuple[float, float]:
        """Axial extent owned by the planes: each plane owns +-dz/2 around its center."""
        dz = self.voxel_pitch_um[0]
        lo = self.z_origin_um - 0.5 * dz
        return lo, lo + self.grid_shape[0] * dz

    @property
    def volume_mm3(self) -> float:
        lo, hi = self.z_slab_um
        height_mm = (hi - lo) * 1e-3
        radius_mm = 0.5 * self.fov_diameter_um * 1e-3
        return math.pi * radius_mm**2 * height_mm

    def z_planes_um(self) -> np.ndarray:
        return self.z_origin_um + np.arange(self.grid_shape[0]) * self.voxel_pitch_um[0]


@dataclass
class Volume:
    """3D intensity grid (z-major) plus the emitter list that produced it."""

    data: np.ndarray
    voxel_pitch_um: tuple[float, float, float]
    z_origin_um: float
    emitters: list[Emitter] = field(default_factory=list)

    @property
    def z_planes_um(self) -> np.ndarray:
        return self.z_origin_um + np.arange(self.data.shape[0]) * self.voxel_pitch_um[0]

    @property
    def x0_um(self) -> float:
        return -(self.data.shape[2] // 2) * self.voxel_pitch_um[2]

    @property
    def y0_um(self) -> float:
        return -(self.data.shape[1] // 2) * self.voxel_pitch_um[1]

    def header(self) -> dict:
        return {
            "axes": "z,y,x",
            "pixel_pitch_um": self.voxel_pitch_um[2],
            "z0_um": self.z_origin_um,
            "dz_um": self.voxel_pitch_um[0],
            "x0_um": self.x0_um,
            "y0_um": self.y0_um,
        }


def sample_emitters(recipe: VolumeRecipe) -> list[Emitter]:
    """Draw a random emitter list for one volume, deterministic given the seed.

    Count: round(max(0, N(density_mean, density_std)) * volume_mm3).
    Centers are uniform in the FOV cylinder (continuous, not voxel-snapped).
    """
    rng = np.random.default_rng(recipe.seed)
    density = max(0.0, rng.normal(recipe.density_mean, recipe.density_std))
    count = round(density * recipe.volume_mm3)

    radius = 0.5 * recipe.fov_diameter_um
    z_lo, z_hi = recipe.z_slab_um
    emitters = []
    for _ in range(count):
        r = radius * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        z = rng.uniform(z_lo, z_hi)
        d = rng.normal(recipe.diameter_mean_um, recipe.diameter_std_um)
        while d < 1.0:
            d = rng.normal(recipe.diameter_mean_um, recipe.diameter_std_um)
        b = float(np.clip(rng.normal(recipe.brightness_mean, recipe.brightness_std), 1e-9, 1.0))
        emitters.append(Emitter(r * math.cos(theta), r * math.sin(theta), z, float(d), b))
    return emitters


def _inside(recipe: VolumeRecipe, e: Emitter) -> bool:
    if math.hypot(e.x_um, e.y_um) > 0.5 * recipe.fov_diameter_um:
        return False
    z_lo, z_hi = recipe.z_slab_um
    if not (z_lo <= e.z_um <= z_hi):
        return False
    return (
        recipe.x_min_um <= e.x_um <= recipe.x_max_um
        and recipe.y_min_um <= e.y_um <= recipe.y_max_um
    )


def rasterize(emitters: list[Emitter], recipe: VolumeRecipe) -> Volume:
    """Render emitters as solid spheres on the fine grid, then mean-pool 5x5x5.

    Overlaps combine by maximum on the fine grid.  Footprints are clipped at
    the fine-grid boundary (only reachable for > 5-sigma diameter draws near
    the axial slab edges).
    """
    bad = [i for i, e in enumerate(emitters) if not _inside(recipe, e)]
    if bad:
        raise EmitterOutsideGridError(bad)

    nz, ny, nx = recipe.grid_shape
    dz, py, px = recipe.voxel_pitch_um
    s = FINE_SUBDIV
    p5x = px / s
    p5y = py / s
    p5z = dz / s
    # fine-grid index of the voxel whose center sits at coordinate 0 (lateral)
    # and at z_origin (axial)
    ox = s * (nx // 2) + s // 2
    oy = s * (ny // 2) + s // 2

    coarse = np.zeros((nz, ny, nx), dtype=np.float64)
    if not emitters:
        return Volume(coarse, recipe.voxel_pitch_um, recipe.z_origin_um, [])

    # fine z index: jz = (z - z_origin)/p5z + 2, so jz = 5k + 2 is plane k's center
    def fine_z(z_um: float) -> float:
        return (z_um - recipe.z_origin_um) / p5z + (s // 2)

    n_fine_z = s * nz
    for k in range(nz):
        slab_lo, slab_hi = s * k, s * k + s
        slab = None
        for e in emitters:
            jz_c = fine_z(e.z_um)
            r_z = e.radius_um / p5z
            jz_min = max(slab_lo, int(math.floor(jz_c - r_z)))
            jz_max = min(slab_hi - 1, min(n_fine_z - 1, int(math.ceil(jz_c + r_z))))
            if jz_min > jz_max:
                continue
            if slab is None:
                slab = np.zeros((s, s * ny, s * nx), dtype=np.float64)
            jx_c = e.x_um / p5x + ox
            jy_c = e.y_um / p5y + oy
            r_x = e.radius_um / p5x
            r_y = e.radius_um / p5y
            jx_min = max(0, int(math.floor(jx_c - r_x)))
            jx_max = min(s * nx - 1, int(math.ceil(jx_c + r_x)))
            jy_min = max(0, int(math.floor(jy_c - r_y)))
            jy_max = min(s * ny - 1, int(math.ceil(jy_c + r_y)))
            zz = (np.arange(jz_min, jz_max + 1, dtype=np.float64) - jz_c) * p5z
            yy = (np.arange(jy_min, jy_max + 1, dtype=np.float64) - jy_c) * p5y
            xx = (np.arange(jx_min, jx_max + 1, dtype=np.float64) - jx_c) * p5x
            d2 = (
                zz[:, None, None] ** 2
                + yy[None, :, None] ** 2
                + xx[None, None, :] ** 2
            )
            ball = (d2 <= e.radius_um**2) * e.brightness
            view = slab[jz_min - slab_lo : jz_max + 1 - slab_lo, jy_min : jy_max + 1, jx_min : jx_max + 1]
            np.maximum(view, ball, out=view)
        if slab is not None:
            coarse[k] = slab.reshape(s, ny, s, nx, s).mean(axis=(0, 2, 4))
    return Volume(coarse, recipe.voxel_pitch_um, recipe.z_origin_um, list(emitters))


EMITTER_CSV_HEADER = ["x_um", "y_um", "z_um", "diameter_um", "brightness"]


def write_emitters_csv(path: str | Path, emitters: list[Emitter]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EMITTER_CSV_HEADER)
        for e in emitters:
            w.writerow([repr(e.x_um), repr(e.y_um), repr(e.z_um), repr(e.diameter_um), repr(e.brightness)])


def read_emitters_csv(path: str | Path) -> list[Emitter]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != EMITTER_CSV_HEADER:
        raise ValueError(f"{path}: bad emitter CSV header {rows[0] if rows else '(empty)'}")
    return [Emitter(*(float(v) for v in row)) for row in rows[1:]]


def save_volume(path: str | Path, vol: Volume, meta: dict | None = None) -> None:
    header = vol.header()
    if meta:
        header["meta"] = meta
    stackio.write_stack(path, vol.data.astype(np.float32), header)


def load_volume(path: str | Path) -> Volume:
    data, header = stackio.read_stack(path)
    lateral = header.get("pixel_pitch_um", VOXEL_PITCH_XY_UM)
    pitch = (header.get("dz_um", VOXEL_PITCH_Z_UM), lateral, lateral)
    return Volume(data.astype(np.float64), pitch, header.get("z0_um", 0.0), [])
