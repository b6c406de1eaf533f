"""Depth-indexed PSF stacks and the 3x3 view geometry.

A measured PSF stack can be loaded from a stack file; a parametric synthetic
stack renders each z-plane as 9 Gaussian spots on the sensor whose centers
follow the parallax model

    center_i(z) = view_center_i + kappa * (z - z_focus) * baseline_dir_i

and whose width grows with defocus, sigma(z) = sqrt(sigma0^2 + (beta*dz)^2)
(in um on the sensor).  Spots are rendered separably with sub-pixel centers,
so the renderer in ``scatter`` can place them without any resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import stackio

SENSOR_PIXEL_PITCH_UM = 2.4
MAGNIFICATION = 0.52
DEFAULT_SIGMA0_UM = 2.7
DEFAULT_BETA = 0.026
DEFAULT_KAPPA_PX_PER_UM = 0.05
SPOT_WINDOW_SIGMAS = 6.0


class PsfFormatError(ValueError):
    pass


class SensorTooSmallError(ValueError):
    pass


class SpotOutOfBoundsError(ValueError):
    def __init__(self, offenders: list[tuple[int, float]]):
        self.offenders = offenders
        super().__init__(f"PSF spots escape the sensor at (view, z_um): {offenders}")


@dataclass(frozen=True)
class ViewGeometry:
    """3x3 view lattice on the sensor.

    ``view_centers`` are float (row, col) sensor coordinates in row-major
    lattice order, so index 4 is the central view.  ``baseline_dirs`` are the
    unit parallax directions per view (zero for the central view) and
    ``parallax_coeff`` is in sensor pixels per um of depth per unit baseline.
    """

    view_centers: np.ndarray  # (9, 2) float, (row, col)
    view_size: int
    parallax_coeff: float
    baseline_dirs: np.ndarray  # (9, 2) float, (drow, dcol)
    sensor_shape: tuple[int, int]

    def crop_bounds(self, i: int) -> tuple[int, int, int, int]:
        """(row0, row1, col0, col1) of view i's crop; centers are chosen so these are exact."""
        cy, cx = self.view_centers[i]
        half = (self.view_size - 1) / 2.0
        r0 = int(math.floor(cy - half + 0.5))
        c0 = int(math.floor(cx - half + 0.5))
        return r0, r0 + self.view_size, c0, c0 + self.view_size

    def to_dict(self) -> dict:
        return {
            "view_centers": self.view_centers.tolist(),
            "view_size": self.view_size,
            "parallax_coeff": self.parallax_coeff,
            "baseline_dirs": self.baseline_dirs.tolist(),
            "sensor_shape": list(self.sensor_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewGeometry":
        return cls(
            view_centers=np.asarray(d["view_centers"], dtype=np.float64),
            view_size=int(d["view_size"]),
            parallax_coeff=float(d["parallax_coeff"]),
            baseline_dirs=np.asarray(d["baseline_dirs"], dtype=np.float64),
            sensor_shape=tuple(d["sensor_shape"]),
        )


def default_view_geometry(
    sensor_shape: tuple[int, int],
    view_size: int = 512,
    parallax_coeff: float = DEFAULT_KAPPA_PX_PER_UM,
) -> ViewGeometry:
    """Uniform 3x3 lattice centered on the sensor with disjoint view crops."""
    h, w = sensor_shape
    if h < 3 * view_size or w < 3 * view_size:
        raise SensorTooSmallError(
            f"sensor {sensor_shape} cannot hold 3 disjoint {view_size}-px views per axis"
        )
    pitch_r = h // 3
    pitch_c = w // 3
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    centers = []
    dirs = []
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            centers.append((cy + i * pitch_r, cx + j * pitch_c))
            norm = math.hypot(i, j)
            dirs.append((i / norm, j / norm) if norm else (0.0, 0.0))
    geo = ViewGeometry(
        view_centers=np.array(centers, dtype=np.float64),
        view_size=view_size,
        parallax_coeff=parallax_coeff,
        baseline_dirs=np.array(dirs, dtype=np.float64),
        sensor_shape=(h, w),
    )
    for i in range(9):
        r0, r1, c0, c1 = geo.crop_bounds(i)
        if r0 < 0 or c0 < 0 or r1 > h or c1 > w:
            raise SensorTooSmallError(f"view {i} crop {(r0, r1, c0, c1)} outside sensor {sensor_shape}")
    return geo


@dataclass(frozen=True)
class SyntheticPsfParams:
    sigma0_um: float = DEFAULT_SIGMA0_UM
    beta: float = DEFAULT_BETA
    kappa_px_per_um: float = DEFAULT_KAPPA_PX_PER_UM
    z_focus_um: float = 0.0
    pixel_pitch_um: float = SENSOR_PIXEL_PITCH_UM

    def __post_init__(self):
        if self.sigma0_um <= 0:
            raise ValueError("sigma0_um must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def sigma_px(self, z_um: float) -> float:
        dz = z_um - self.z_focus_um
        return math.hypot(self.sigma0_um, self.beta * dz) / self.pixel_pitch_um

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticPsfParams":
        return cls(**d)


@dataclass(frozen=True)
class SpotModel:
    """Separable-Gaussian spot decomposition of a synthetic PSF stack."""

    centers: np.ndarray  # (nz, 9, 2) float sensor coords
    sigma_px: np.ndarray  # (nz,)
    weight: float  # mass per spot
    halfwidth: np.ndarray  # (nz,) int window half-width


@dataclass
class PsfStack:
    """Per-depth sensor-plane kernels; each plane is normalized to unit sum."""

    z_planes_um: np.ndarray
    sensor_shape: tuple[int, int]
    kernels: np.ndarray | None = None  # (nz, H, W), lazily built for synthetic stacks
    spots: SpotModel | None = None
    pixel_pitch_um: float = SENSOR_PIXEL_PITCH_UM
    magnification: float = MAGNIFICATION

    @property
    def n_planes(self) -> int:
        return len(self.z_planes_um)

    def kernel(self, k: int) -> np.ndarray:
        if self.kernels is not None:
            return self.kernels[k]
        return _render_plane(self.spots, k, self.sensor_shape)

    def materialize(self) -> np.ndarray:
        if self.kernels is None:
            self.kernels = np.stack([self.kernel(k) for k in range(self.n_planes)])
        return self.kernels


def gaussian_1d(halfwidth: int, sigma: float, delta: float = 0.0) -> np.ndarray:
    """Unit-sum 1D Gaussian sampled on [-h, h] around a sub-pixel center delta."""
    t = np.arange(-halfwidth, halfwidth + 1, dtype=np.float64)
    v = np.exp(-((t - delta) ** 2) / (2.0 * sigma * sigma))
    return v / v.sum()


def _spot_halfwidth(sigma_px: float) -> int:
    return max(4, int(math.ceil(SPOT_WINDOW_SIGMAS * sigma_px)))


def _render_plane(spots: SpotModel, k: int, sensor_shape: tuple[int, int]) -> np.ndarray:
    h_img, w_img = sensor_shape
    out = np.zeros((h_img, w_img), dtype=np.float64)
    hw = int(spots.halfwidth[k])
    sigma = float(spots.sigma_px[k])
    for i in range(spots.centers.shape[1]):
        cy, cx = spots.centers[k, i]
        by = int(math.floor(cy + 0.5))
        bx = int(math.floor(cx + 0.5))
        gy = gaussian_1d(hw, sigma, cy - by)
        gx = gaussian_1d(hw, sigma, cx - bx)
        out[by - hw : by + hw + 1, bx - hw : bx + hw + 1] += spots.weight * np.outer(gy, gx)
    return out


def synthesize_psf_stack(
    params: SyntheticPsfParams,
    geometry: ViewGeometry,
    z_planes_um: np.ndarray,
    materialize: bool = False,
) -> PsfStack:
    """Build the parametric 9-spot stack; errors if any spot window leaves the sensor."""
    z_planes_um = np.asarray(z_planes_um, dtype=np.float64)
    nz = len(z_planes_um)
    centers = np.empty((nz, 9, 2), dtype=np.float64)
    sigma_px = np.empty(nz, dtype=np.float64)
    halfwidth = np.empty(nz, dtype=np.int64)
    offenders: list[tuple[int, float]] = []
    h_img, w_img = geometry.sensor_shape
    for k, z in enumerate(z_planes_um):
        sigma_px[k] = params.sigma_px(z)
        hw = _spot_halfwidth(sigma_px[k])
        halfwidth[k] = hw
        shift = params.kappa_px_per_um * (z - params.z_focus_um)
        centers[k] = geometry.view_centers + shift * geometry.baseline_dirs
        for i in range(9):
            by = int(math.floor(centers[k, i, 0] + 0.5))
            bx = int(math.floor(centers[k, i, 1] + 0.5))
            if by - hw < 0 or by + hw >= h_img or bx - hw < 0 or bx + hw >= w_img:
                offenders.append((i, float(z)))
    if offenders:
        raise SpotOutOfBoundsError(offenders)
    stack = PsfStack(
        z_planes_um=z_planes_um,
        sensor_shape=geometry.sensor_shape,
        spots=SpotModel(centers=centers, sigma_px=sigma_px, weight=1.0 / 9.0, halfwidth=halfwidth),
        pixel_pitch_um=params.pixel_pitch_um,
    )
    if materialize:
        stack.materialize()
    return stack


def load_psf_stack(path, expected_planes: int | None = None) -> PsfStack:
    """Load a measured-style stack file and normalize each plane to unit sum."""
    data, header = stackio.read_stack(path)
    if header.get("axes") != "z,y,x" or data.ndim != 3:
        raise PsfFormatError(f"{path}: PSF stack must have axes z,y,x")
    if expected_planes is not None and data.shape[0] != expected_planes:
        raise PsfFormatError(
            f"{path}: {data.shape[0]} planes but configuration expects {expected_planes}"
        )
    if np.any(data < 0):
        raise PsfFormatError(f"{path}: negative kernel values")
    sums = data.reshape(data.shape[0], -1).sum(axis=1)
    if np.any(sums <= 0):
        raise PsfFormatError(f"{path}: plane(s) with non-positive total energy")
    kernels = data.astype(np.float64) / sums[:, None, None]
    z0 = header.get("z0_um", 0.0)
    dz = header.get("dz_um", 25.0)
    z_planes = z0 + dz * np.arange(data.shape[0])
    return PsfStack(
        z_planes_um=z_planes,
        sensor_shape=data.shape[1:],
        kernels=kernels,
        pixel_pitch_um=header.get("pixel_pitch_um", SENSOR_PIXEL_PITCH_UM),
    )


def save_psf_stack(path, stack: PsfStack) -> None:
    kernels = stack.materialize()
    dz = float(stack.z_planes_um[1] - stack.z_planes_um[0]) if stack.n_planes > 1 else 25.0
    stackio.write_stack(
        path,
        kernels.astype(np.float32),
        {
            "axes": "z,y,x",
            "z0_um": float(stack.z_planes_um[0]),
            "dz_um": dz,
            "pixel_pitch_um": stack.pixel_pitch_um,
        },
    )
