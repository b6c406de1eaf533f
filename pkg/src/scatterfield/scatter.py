"""Measurement synthesis: free-space rendering, background, SBR, noise.

The forward model composes a scattering measurement as

    g = alpha * free_space + background

with both terms max-normalized to [0, 1] beforehand.  ``alpha`` is calibrated
so that (alpha * S_bar + BG_bar) / BG_bar hits a requested signal-to-
background ratio, where S_bar is the mean regional-maximum value of the
free-space image and BG_bar the mean of the blurred value-noise canvas.
Sensor noise is mixed Poisson-Gaussian, f = g + sqrt(a*g + b) * xi.

Free-space rendering sums per-plane 2D convolutions of the volume with the
PSF stack.  For synthetic (separable-spot) PSFs the renderer scatter-adds
per-voxel spot windows, which makes integer lateral volume shifts translate
the measurement bit-exactly; an FFT path (linear, zero-padded) covers dense
volumes and measured kernel stacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage as ndi
from scipy.fft import irfft2, next_fast_len, rfft2

from .optics import PsfStack, ViewGeometry
from .volume import Volume

FREE_SPACE = "free_space"
SCATTERING = "scattering"
NOISY = "noisy"

# calibrated sensor noise statistics on [0, 1]-normalized data
NOISE_A_MEAN = 1.49e-4
NOISE_A_STD = 0.57e-4
NOISE_B_MEAN = 5.41e-6
NOISE_B_STD = 2.78e-6


class PlaneMismatchError(ValueError):
    pass


class UndefinedSignalError(ValueError):
    """Free-space image has no positive regional maxima (no emitters)."""


@dataclass
class NoiseParams:
    a: float
    b: float
    seed: int = 0

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "seed": int(self.seed)}


@dataclass(frozen=True)
class AttenuationModel:
    """Beer-Lambert ballistic attenuation, I(depth) = I0 * exp(-depth / ls)."""

    scattering_length_um: float
    surface_z_um: float = 0.0

    def __post_init__(self):
        if self.scattering_length_um <= 0:
            raise ValueError("scattering_length_um must be > 0")

    def factor(self, z_um: np.ndarray | float) -> np.ndarray | float:
        depth = np.maximum(0.0, np.asarray(z_um, dtype=np.float64) - self.surface_z_um)
        return np.exp(-depth / self.scattering_length_um)


@dataclass(frozen=True)
class BackgroundParams:
    """Gaussian-blurred value noise, enveloped and tiled per view region."""

    lattice_pitch_px: int = 25
    blur_sigma_range_um: tuple[float, float] = (31.2, 48.0)
    envelope_sigma_um: Optional[float] = None  # default: half the view FOV radius
    canvas_px: int = 600
    shared: bool = False  # one realization replicated across views

    def __post_init__(self):
        lo, hi = self.blur_sigma_range_um
        if not (0 < lo <= hi):
            raise ValueError("blur_sigma_range_um must be positive and ordered")
        if self.canvas_px < self.lattice_pitch_px:
            raise ValueError("canvas must be at least one lattice cell")


@dataclass
class SimMeta:
    kind: str = FREE_SPACE
    alpha: Optional[float] = None
    sbr_target: Optional[float] = None
    sbr_realized: Optional[float] = None
    s_bar: Optional[float] = None
    bg_bar: Optional[float] = None
    norm_peak: Optional[float] = None
    noise: Optional[dict] = None
    attenuation_ls_um: Optional[float] = None
    surface_z_um: Optional[float] = None
    bg_blur_sigmas_um: Optional[list[float]] = None
    empty_volume: bool = False
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimMeta":
        known = {k: d[k] for k in cls().__dict__ if k in d}
        return cls(**known)


@dataclass
class Measurement:
    data: np.ndarray  # (H, W)
    kind: str
    meta: SimMeta
    pixel_pitch_um: float = 2.4

    @property
    def sensor_shape(self) -> tuple[int, int]:
        return self.data.shape


def save_measurement(path, m: Measurement) -> None:
    from . import stackio

    stackio.write_stack(
        path,
        m.data.astype(np.float32),
        {"axes": "y,x", "pixel_pitch_um": m.pixel_pitch_um, "meta": m.meta.to_dict()},
    )


def load_measurement(path) -> Measurement:
    from . import stackio

    data, header = stackio.read_stack(path)
    meta = SimMeta.from_dict(header.get("meta", {}))
    return Measurement(
        data.astype(np.float64),
        kind=meta.kind,
        meta=meta,
        pixel_pitch_um=header.get("pixel_pitch_um", 2.4),
    )


# --- free-space rendering ---------------------------------------------------


def _add_window(out: np.ndarray, top: int, left: int, patch: np.ndarray, scale: float) -> None:
    """out[top:, left:] += scale * patch, clipped to the frame of ``out``."""
    h_out, w_out = out.shape
    h, w = patch.shape
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + h, h_out), min(left + w, w_out)
    if r0 >= r1 or c0 >= c1:
        return
    out[r0:r1, c0:c1] += scale * patch[r0 - top : r1 - top, c0 - left : c1 - left]


def _check_planes(volume: Volume, psf: PsfStack) -> None:
    if volume.data.shape[0] != psf.n_planes:
        raise PlaneMismatchError(
            f"volume has {volume.data.shape[0]} planes, PSF stack has {psf.n_planes}"
        )
    if not np.allclose(volume.z_planes_um, psf.z_planes_um, atol=1e-6):
        raise PlaneMismatchError("volume and PSF z-planes differ")


def _render_spots(volume: Volume, psf: PsfStack) -> np.ndarray:
    spots = psf.spots
    h_img, w_img = psf.sensor_shape
    out = np.zeros((h_img, w_img), dtype=np.float64)
    nz, ny, nx = volume.data.shape
    qy0, qx0 = ny // 2, nx // 2
    from .optics import gaussian_1d

    for k in range(nz):
        plane = volume.data[k]
        iy, ix = np.nonzero(plane)
        if iy.size == 0:
            continue
        vals = plane[iy, ix]
        hw = int(spots.halfwidth[k])
        sigma = float(spots.sigma_px[k])
        for i in range(spots.centers.shape[1]):
            cy, cx = spots.centers[k, i]
            by = int(math.floor(cy + 0.5))
            bx = int(math.floor(cx + 0.5))
            patch = spots.weight * np.outer(
                gaussian_1d(hw, sigma, cy - by), gaussian_1d(hw, sigma, cx - bx)
            )
            tops = by - hw + (iy - qy0)
            lefts = bx - hw + (ix - qx0)
            for t, l, v in zip(tops, lefts, vals):
                _add_window(out, int(t), int(l), patch, float(v))
    return out


def _render_fft(volume: Volume, psf: PsfStack) -> np.ndarray:
    kernels = psf.materialize()
    h_img, w_img = psf.sensor_shape
    nz, ny, nx = volume.data.shape
    p_y = next_fast_len(h_img + ny)
    p_x = next_fast_len(w_img + nx)
    acc = None
    for k in range(nz):
        plane = volume.data[k]
        if not plane.any():
            continue
        f = rfft2(plane, s=(p_y, p_x)) * rfft2(kernels[k], s=(p_y, p_x))
        acc = f if acc is None else acc + f
    if acc is None:
        return np.zeros((h_img, w_img), dtype=np.float64)
    full = irfft2(acc, s=(p_y, p_x))
    out = full[ny // 2 : ny // 2 + h_img, nx // 2 : nx // 2 + w_img]
    # FFT round-off: clamp negatives and flush the noise floor to exact zeros
    peak = out.max()
    out = np.maximum(out, 0.0)
    if peak > 0:
        out[out < peak * 1e-12] = 0.0
    return np.ascontiguousarray(out)


def render_free_space(
    volume: Volume,
    psf: PsfStack,
    method: str = "auto",
    normalize: bool = True,
) -> Measurement:
    """Sum over z of PSF(.,.;z) (x) V(.,.;z), linear zero-padded convolution.

    The result is max-normalized to [0, 1] unless ``normalize=False``.  An
    empty volume yields a valid all-zero measurement flagged in the meta.
    """
    _check_planes(volume, psf)
    if method == "auto":
        method = "spots" if psf.spots is not None else "fft"
    if method == "spots":
        if psf.spots is None:
            raise ValueError("PSF stack carries no spot model; use method='fft'")
        data = _render_spots(volume, psf)
    elif method == "fft":
        data = _render_fft(volume, psf)
    else:
        raise ValueError(f"unknown render method {method!r}")

    peak = float(data.max())
    meta = SimMeta(kind=FREE_SPACE, norm_peak=peak, empty_volume=peak <= 0.0)
    if normalize and peak > 0:
        data = data / peak
    return Measurement(data, FREE_SPACE, meta, pixel_pitch_um=psf.pixel_pitch_um)


# --- background --------------------------------------------------------------


def value_noise_canvas(lattice_pitch_px: int, canvas_px: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinear interpolation of uniform [0,1] lattice values onto the canvas.

    Evaluated at lattice points the canvas reproduces the raw lattice values.
    The lattice wraps, so the canvas is periodic and the subsequent blur can
    be an exact (frequency-domain) Gaussian.
    """
    n_cells = int(math.ceil(canvas_px / lattice_pitch_px))
    nodes = rng.uniform(0.0, 1.0, size=(n_cells, n_cells))
    u = np.arange(canvas_px, dtype=np.float64) / lattice_pitch_px
    i0 = u.astype(np.int64) % n_cells
    i1 = (i0 + 1) % n_cells
    frac = u - np.floor(u)
    fy, fx = frac[:, None], frac[None, :]
    r0, c0 = i0[:, None], i0[None, :]
    r1, c1 = i1[:, None], i1[None, :]
    return (
        nodes[r0, c0] * (1 - fy) * (1 - fx)
        + nodes[r0, c1] * (1 - fy) * fx
        + nodes[r1, c0] * fy * (1 - fx)
        + nodes[r1, c1] * fy * fx
    )


def periodic_gaussian_blur(img: np.ndarray, sigma_px: float) -> np.ndarray:
    """Exact Gaussian low-pass of the periodic extension of ``img``."""
    if sigma_px <= 0:
        return img
    h, w = img.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    transfer = np.exp(-2.0 * math.pi**2 * sigma_px**2 * (fy**2 + fx**2))
    return irfft2(rfft2(img) * transfer, s=(h, w))


def _resample_bilinear(img: np.ndarray, out_px: int) -> np.ndarray:
    n = img.shape[0]
    u = np.linspace(0.0, n - 1, out_px)
    coords = np.meshgrid(u, u, indexing="ij")
    return ndi.map_coordinates(img, coords, order=1, mode="nearest")


def view_envelope(view_size: int, sigma_px: float) -> np.ndarray:
    """Circular Gaussian apodization mask centered on a view region."""
    half = (view_size - 1) / 2.0
    yy = np.arange(view_size, dtype=np.float64) - half
    return np.exp(-(yy[:, None] ** 2 + yy[None, :] ** 2) / (2.0 * sigma_px**2))


def generate_background(
    params: BackgroundParams,
    geometry: ViewGeometry,
    seed: int,
    object_pitch_um: float = 4.15,
) -> tuple[np.ndarray, float, list[float]]:
    """Build the sensor-frame background; returns (image, bg_bar, blur sigmas).

    One independent canvas per view region (or one shared canvas): value
    noise, Gaussian blur with a sigma drawn from the configured range, per-
    canvas max-normalization.  bg_bar is the mean pixel value of the blurred
    canvases, before the circular Gaussian envelope is applied.
    """
    rng = np.random.default_rng(seed)
    canvas_pitch_um = geometry.view_size * object_pitch_um / params.canvas_px
    n_realizations = 1 if params.shared else 9

    canvases = []
    sigmas_um = []
    for _ in range(n_realizations):
        sigma_um = rng.uniform(*params.blur_sigma_range_um)
        raw = value_noise_canvas(params.lattice_pitch_px, params.canvas_px, rng)
        blurred = periodic_gaussian_blur(raw, sigma_um / canvas_pitch_um)
        peak = blurred.max()
        if peak > 0:
            blurred = blurred / peak
        canvases.append(blurred)
        sigmas_um.append(float(sigma_um))
    bg_bar = float(np.mean([c.mean() for c in canvases]))

    sigma_env_um = params.envelope_sigma_um
    if sigma_env_um is None:
        sigma_env_um = geometry.view_size * object_pitch_um / 4.0
    sigma_env_px = sigma_env_um / object_pitch_um

    v = geometry.view_size
    env = view_envelope(v, sigma_env_px)

    bg = np.zeros(geometry.sensor_shape, dtype=np.float64)
    for i in range(9):
        canvas = canvases[0] if params.shared else canvases[i]
        tile = _resample_bilinear(canvas, v) * env
        r0, r1, c0, c1 = geometry.crop_bounds(i)
        bg[r0:r1, c0:c1] = tile
    return bg, bg_bar, sigmas_um


# --- SBR calibration ----------------------------------------------------------


def regional_max_values(img: np.ndarray) -> np.ndarray:
    """Values of strict regional maxima (8-connected, plateau-tolerant)."""
    mx = ndi.maximum_filter(img, size=3, mode="constant", cval=-np.inf)
    seeds = img >= mx
    structure = np.ones((3, 3), dtype=bool)
    lbl, n = ndi.label(seeds, structure=structure)
    values = []
    for sl, region in zip(ndi.find_objects(lbl), range(1, n + 1)):
        r = (
            slice(max(sl[0].start - 1, 0), min(sl[0].stop + 1, img.shape[0])),
            slice(max(sl[1].start - 1, 0), min(sl[1].stop + 1, img.shape[1])),
        )
        mask = lbl[r] == region
        value = img[r][mask][0]
        ring = ndi.binary_dilation(mask, structure=structure) & ~mask
        if not ring.any() or np.all(img[r][ring] < value):
            values.append(value)
    return np.asarray(values, dtype=np.float64)


def compute_s_bar(free_space: Measurement | np.ndarray) -> float:
    """Mean of positive regional-maximum values of a noiseless free-space image."""
    img = free_space.data if isinstance(free_space, Measurement) else np.asarray(free_space)
    vals = regional_max_values(img)
    vals = vals[vals > 0]
    if vals.size == 0:
        raise UndefinedSignalError("no positive regional maxima; cannot define S_bar")
    return float(vals.mean())


def calibrate_alpha(sbr_target: float, s_bar: float, bg_bar: float) -> float:
    """Exact inversion of the SBR definition: alpha = (SBR - 1) * BG_bar / S_bar."""
    if sbr_target < 1.0:
        raise ValueError(f"sbr_target must be >= 1, got {sbr_target}")
    if s_bar <= 0 or bg_bar <= 0:
        raise ValueError("s_bar and bg_bar must be > 0")
    return (sbr_target - 1.0) * bg_bar / s_bar


def compose_scattering(
    free_space: Measurement,
    background: np.ndarray,
    alpha: float,
    s_bar: float | None = None,
    bg_bar: float | None = None,
    sbr_target: float | None = None,
) -> Measurement:
    """g = alpha * free_space + background (both inputs already in [0, 1])."""
    if free_space.data.shape != background.shape:
        raise ValueError(
            f"shape mismatch: free-space {free_space.data.shape} vs background {background.shape}"
        )
    data = alpha * free_space.data + background
    meta = replace(free_space.meta)
    meta.kind = SCATTERING
    meta.alpha = float(alpha)
    meta.sbr_target = sbr_target
    meta.s_bar = s_bar
    meta.bg_bar = bg_bar
    if s_bar is not None and bg_bar is not None:
        meta.sbr_realized = (alpha * s_bar + bg_bar) / bg_bar
    return Measurement(data, SCATTERING, meta, pixel_pitch_um=free_space.pixel_pitch_um)


# --- sensor noise -------------------------------------------------------------


def sample_noise_params(seed: int) -> NoiseParams:
    """Draw (a, b) from the calibrated normals, resampling until both positive."""
    rng = np.random.default_rng(seed)
    a = rng.normal(NOISE_A_MEAN, NOISE_A_STD)
    while a <= 0:
        a = rng.normal(NOISE_A_MEAN, NOISE_A_STD)
    b = rng.normal(NOISE_B_MEAN, NOISE_B_STD)
    while b <= 0:
        b = rng.normal(NOISE_B_MEAN, NOISE_B_STD)
    return NoiseParams(a=float(a), b=float(b), seed=seed)


def apply_mpg_noise(g: Measurement, params: NoiseParams, clip: bool = False) -> Measurement:
    """f = g + sqrt(a*g + b) * xi with per-pixel standard normal xi.

    The background is part of the signal here.  Output may dip slightly below
    zero unless ``clip`` is set.
    """
    variance = params.a * g.data + params.b
    if np.any(variance < 0):
        raise ValueError("a*g + b < 0 at some pixel; invalid noise parameters")
    rng = np.random.default_rng(params.seed)
    data = g.data + np.sqrt(variance) * rng.standard_normal(g.data.shape)
    if clip:
        data = np.maximum(data, 0.0)
    meta = replace(g.meta)
    meta.kind = NOISY
    meta.noise = params.to_dict()
    return Measurement(data, NOISY, meta, pixel_pitch_um=g.pixel_pitch_um)


# --- attenuation ---------------------------------------------------------------


def apply_attenuation(volume: Volume, model: AttenuationModel) -> Volume:
    """Scale each plane by exp(-depth/ls); emitter brightness follows suit.

    Test-data only: training volumes stay unattenuated so the SBR of the
    simulated measurement stays controlled.
    """
    factors = model.factor(volume.z_planes_um)
    data = volume.data * factors[:, None, None]
    emitters = [
        replace(e, brightness=float(e.brightness * model.factor(e.z_um)))
        for e in volume.emitters
    ]
    return Volume(data, volume.voxel_pitch_um, volume.z_origin_um, emitters)


# --- full pipeline --------------------------------------------------------------


def simulate_pair(
    volume: Volume,
    psf: PsfStack,
    bg_params: BackgroundParams,
    geometry: ViewGeometry,
    sbr_target: float,
    noise: NoiseParams | None = None,
    attenuation: AttenuationModel | None = None,
    bg_seed: int = 0,
    clip: bool = False,
    render_method: str = "auto",
) -> tuple[Measurement, Volume]:
    """[attenuate] -> render -> normalize -> background -> calibrate -> compose -> [noise].

    Returns the measurement and the unattenuated ground-truth volume; all
    parameters and seeds land in the measurement meta.
    """
    rendered_volume = apply_attenuation(volume, attenuation) if attenuation else volume
    fs = render_free_space(rendered_volume, psf, method=render_method)
    s_bar = compute_s_bar(fs)
    bg, bg_bar, sigmas = generate_background(
        bg_params, geometry, bg_seed, object_pitch_um=volume.voxel_pitch_um[2]
    )
    alpha = calibrate_alpha(sbr_target, s_bar, bg_bar)
    m = compose_scattering(fs, bg, alpha, s_bar=s_bar, bg_bar=bg_bar, sbr_target=sbr_target)
    m.meta.bg_blur_sigmas_um = sigmas
    m.meta.seeds["background"] = int(bg_seed)
    if attenuation is not None:
        m.meta.attenuation_ls_um = attenuation.scattering_length_um
        m.meta.surface_z_um = attenuation.surface_z_um
    if noise is not None:
        m = apply_mpg_noise(m, noise, clip=clip)
        m.meta.seeds["noise"] = int(noise.seed)
    return m, volume
