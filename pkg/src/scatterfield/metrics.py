"""Detection-based scoring of 3D reconstructions and PCA patch analysis.

Reconstructions are thresholded, split into 26-connected components and
reduced to intensity-weighted centroids.  Detections match ground-truth
emitters one-to-one when both the lateral and the axial distance are within
tolerance; the Hungarian matcher maximizes match count first and total
normalized distance second.  Scores are binned by reconstruction plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from scipy.optimize import linear_sum_assignment

from .volume import Emitter, Volume

FORBIDDEN_COST = 1e9


@dataclass(frozen=True)
class Detection:
    x_um: float
    y_um: float
    z_um: float
    peak_value: float


@dataclass(frozen=True)
class MatchConfig:
    intensity_threshold: float = 0.5
    lateral_tol_um: float = 8.3  # 2 lateral voxels
    axial_tol_um: float = 25.0  # 1 plane
    matcher: str = "hungarian"

    def __post_init__(self):
        if not (0 < self.intensity_threshold < 1):
            raise ValueError("intensity_threshold must be in (0, 1)")
        if self.lateral_tol_um <= 0 or self.axial_tol_um <= 0:
            raise ValueError("tolerances must be > 0")
        if self.matcher not in ("hungarian", "greedy"):
            raise ValueError(f"unknown matcher {self.matcher!r}")


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@dataclass
class DepthBin:
    z_um: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _safe_div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _safe_div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return _safe_div(2 * p * r, p + r)


@dataclass
class DetectionReport:
    bins: dict[float, DepthBin] = field(default_factory=dict)
    matches: list[tuple[int, int]] = field(default_factory=list)  # (detection idx, emitter idx)

    def _bin(self, z_um: float) -> DepthBin:
        if z_um not in self.bins:
            self.bins[z_um] = DepthBin(z_um=z_um)
        return self.bins[z_um]

    @property
    def tp(self) -> int:
        return sum(b.tp for b in self.bins.values())

    @property
    def fp(self) -> int:
        return sum(b.fp for b in self.bins.values())

    @property
    def fn(self) -> int:
        return sum(b.fn for b in self.bins.values())

    @property
    def precision(self) -> float:
        return _safe_div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _safe_div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return _safe_div(2 * p * r, p + r)


def detect(volume: Volume, cfg: MatchConfig = MatchConfig()) -> list[Detection]:
    """Threshold, 26-connected components, intensity-weighted centroids."""
    mask = volume.data > cfg.intensity_threshold
    if not mask.any():
        return []
    lbl, n = ndi.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    index = np.arange(1, n + 1)
    centroids = ndi.center_of_mass(volume.data, lbl, index)
    peaks = ndi.maximum(volume.data, lbl, index)
    dz, py, px = volume.voxel_pitch_um
    detections = []
    for (cz, cy, cx), peak in zip(centroids, peaks):
        detections.append(
            Detection(
                x_um=volume.x0_um + cx * px,
                y_um=volume.y0_um + cy * py,
                z_um=volume.z_origin_um + cz * dz,
                peak_value=float(peak),
            )
        )
    return detections


def _pair_allowed(det: Detection, em: Emitter, cfg: MatchConfig) -> tuple[bool, float]:
    lateral = math.hypot(det.x_um - em.x_um, det.y_um - em.y_um)
    axial = abs(det.z_um - em.z_um)
    ok = lateral <= cfg.lateral_tol_um and axial <= cfg.axial_tol_um
    return ok, math.hypot(lateral / cfg.lateral_tol_um, axial / cfg.axial_tol_um)


def _nearest_plane(z_um: float, z_planes_um: np.ndarray) -> float:
    return float(z_planes_um[np.argmin(np.abs(z_planes_um - z_um))])


def match(
    detections: list[Detection],
    ground_truth: list[Emitter],
    cfg: MatchConfig,
    z_planes_um: np.ndarray,
) -> DetectionReport:
    """One-to-one matching; unmatched detections are FP, unmatched emitters FN.

    TP/FN are binned by the ground-truth emitter's nearest plane; FP by the
    detection's own depth (false positives have no ground-truth bin).
    """
    z_planes_um = np.asarray(z_planes_um, dtype=np.float64)
    report = DetectionReport()
    n_det, n_gt = len(detections), len(ground_truth)

    pairs = []
    if n_det and n_gt:
        cost = np.full((n_det, n_gt), FORBIDDEN_COST)
        for i, det in enumerate(detections):
            for j, em in enumerate(ground_truth):
                ok, dist = _pair_allowed(det, em, cfg)
                if ok:
                    cost[i, j] = dist
        if cfg.matcher == "hungarian":
            rows, cols = linear_sum_assignment(cost)
            pairs = [(i, j) for i, j in zip(rows, cols) if cost[i, j] < FORBIDDEN_COST]
        else:
            candidates = sorted(
                ((cost[i, j], i, j) for i in range(n_det) for j in range(n_gt) if cost[i, j] < FORBIDDEN_COST)
            )
            used_det: set[int] = set()
            used_gt: set[int] = set()
            for _, i, j in candidates:
                if i not in used_det and j not in used_gt:
                    pairs.append((i, j))
                    used_det.add(i)
                    used_gt.add(j)

    matched_det = {i for i, _ in pairs}
    matched_gt = {j for _, j in pairs}
    report.matches = pairs
    for _, j in pairs:
        report._bin(_nearest_plane(ground_truth[j].z_um, z_planes_um)).tp += 1
    for j, em in enumerate(ground_truth):
        if j not in matched_gt:
            report._bin(_nearest_plane(em.z_um, z_planes_um)).fn += 1
    for i, det in enumerate(detections):
        if i not in matched_det:
            report._bin(_nearest_plane(det.z_um, z_planes_um)).fp += 1
    return report


def f1_vs_depth(
    reports: list[DetectionReport],
    scattering_length_um: float | None,
    surface_z_um: float = 0.0,
) -> list[dict]:
    """Mean F1 (with standard error over samples) per occupied depth bin.

    Bins with no ground-truth emitters in any sample are omitted.  Counts are
    pooled over samples for reference; precision/recall/F1 are per-sample
    means, matching shaded-region-style plots.
    """
    zs = sorted({z for r in reports for z, b in r.bins.items() if b.tp + b.fn > 0})
    rows = []
    for z in zs:
        per_sample = [r.bins[z] for r in reports if z in r.bins and r.bins[z].tp + r.bins[z].fn > 0]
        f1s = np.array([b.f1 for b in per_sample])
        stderr = float(f1s.std(ddof=1) / math.sqrt(len(f1s))) if len(f1s) > 1 else 0.0
        rows.append(
            {
                "z_um": z,
                "z_over_ls": (z - surface_z_um) / scattering_length_um if scattering_length_um else None,
                "tp": sum(b.tp for b in per_sample),
                "fp": sum(b.fp for b in per_sample),
                "fn": sum(b.fn for b in per_sample),
                "precision": float(np.mean([b.precision for b in per_sample])),
                "recall": float(np.mean([b.recall for b in per_sample])),
                "f1": float(f1s.mean()),
                "stderr": stderr,
            }
        )
    return rows


PATCH_SIZE = 32


class DegeneratePatchSetError(ValueError):
    pass


def extract_patches(image: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """32x32 patches centered at (row, col) pixel locations, >= 16 px from borders."""
    half = PATCH_SIZE // 2
    h, w = image.shape
    patches = []
    for r, c in np.asarray(locations, dtype=np.int64):
        if r < half or c < half or r > h - half or c > w - half:
            raise ValueError(f"patch at ({r}, {c}) closer than {half} px to the border")
        patches.append(image[r - half : r + half, c - half : c + half])
    return np.asarray(patches, dtype=np.float64)


def pca_patches(patch_sources: list[tuple[str, np.ndarray, np.ndarray]]) -> list[dict]:
    """Joint PCA of emitter-centered patches across measurement domains.

    ``patch_sources`` holds (domain label, image, (n, 2) pixel locations)
    triples.  Patches are flattened and mean-centered jointly; rows of the
    result carry the first two principal-component scores per patch.
    """
    labels = []
    stacks = []
    for domain, image, locations in patch_sources:
        patches = extract_patches(image, locations)
        for p in patches:
            labels.append(domain)
            stacks.append(p.ravel())
    if len(stacks) < 2:
        raise DegeneratePatchSetError(f"need >= 2 patches, got {len(stacks)}")
    x = np.asarray(stacks)
    x = x - x.mean(axis=0, keepdims=True)
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    scores = u * s  # (n_patches, k)
    return [
        {"domain": lab, "pc1": float(scores[i, 0]), "pc2": float(scores[i, 1]) if scores.shape[1] > 1 else 0.0}
        for i, lab in enumerate(labels)
    ]
