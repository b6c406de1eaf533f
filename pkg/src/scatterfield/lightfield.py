"""View extraction and shift-and-add refocusing.

These produce the two network-input representations of a measurement: the
stack of 9 lenslet views and the refocused focal stack.  Refocusing shifts
each view against its parallax, -kappa * (z - z_focus) * baseline_dir, with
bilinear sub-pixel interpolation, and averages; border pixels renormalize by
the summed interpolation weight of the views that actually contribute, so a
flat field stays flat out to the edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .optics import ViewGeometry
from .scatter import Measurement


class CropOutOfBoundsError(ValueError):
    pass


@dataclass
class ViewStack:
    views: np.ndarray  # (9, view_size, view_size), row-major over the 3x3 lattice
    geometry: ViewGeometry


@dataclass
class RefocusedVolume:
    planes: np.ndarray  # (nz, view_size, view_size)
    z_planes_um: np.ndarray


def extract_views(m: Measurement | np.ndarray, geometry: ViewGeometry) -> ViewStack:
    """Crop the 9 views around their centers; no resampling."""
    img = m.data if isinstance(m, Measurement) else np.asarray(m)
    h, w = img.shape
    views = np.empty((9, geometry.view_size, geometry.view_size), dtype=img.dtype)
    for i in range(9):
        r0, r1, c0, c1 = geometry.crop_bounds(i)
        if r0 < 0 or c0 < 0 or r1 > h or c1 > w:
            raise CropOutOfBoundsError(f"view {i} crop {(r0, r1, c0, c1)} outside sensor {img.shape}")
        views[i] = img[r0:r1, c0:c1]
    return ViewStack(views=views, geometry=geometry)


def refocus(
    views: ViewStack,
    geometry: ViewGeometry,
    z_planes_um: np.ndarray,
    z_focus_um: float = 0.0,
) -> RefocusedVolume:
    """Shift-and-add focal stack over the reconstruction planes."""
    z_planes_um = np.asarray(z_planes_um, dtype=np.float64)
    v = geometry.view_size
    planes = np.empty((len(z_planes_um), v, v), dtype=np.float64)
    ones = np.ones((v, v), dtype=np.float64)
    for k, z in enumerate(z_planes_um):
        acc = np.zeros((v, v), dtype=np.float64)
        weight = np.zeros((v, v), dtype=np.float64)
        for i in range(9):
            shift = -geometry.parallax_coeff * (z - z_focus_um) * geometry.baseline_dirs[i]
            if shift[0] == 0.0 and shift[1] == 0.0:
                acc += views.views[i]
                weight += ones
            else:
                acc += ndi.shift(views.views[i], shift, order=1, mode="constant", cval=0.0)
                weight += ndi.shift(ones, shift, order=1, mode="constant", cval=0.0)
        mask = weight > 1e-12
        plane = np.zeros((v, v), dtype=np.float64)
        plane[mask] = acc[mask] / weight[mask]
        planes[k] = plane
    return RefocusedVolume(planes=planes, z_planes_um=z_planes_um)


def save_views(path, vs: ViewStack, meta: dict | None = None) -> None:
    from . import stackio

    header: dict = {"axes": "c,y,x"}
    if meta:
        header["meta"] = meta
    stackio.write_stack(path, vs.views.astype(np.float32), header)


def save_refocus(path, rv: RefocusedVolume, meta: dict | None = None) -> None:
    from . import stackio

    dz = float(rv.z_planes_um[1] - rv.z_planes_um[0]) if len(rv.z_planes_um) > 1 else 25.0
    header: dict = {
        "axes": "z,y,x",
        "z0_um": float(rv.z_planes_um[0]),
        "dz_um": dz,
        "pixel_pitch_um": 4.15,
    }
    if meta:
        header["meta"] = meta
    stackio.write_stack(path, rv.planes.astype(np.float32), header)
