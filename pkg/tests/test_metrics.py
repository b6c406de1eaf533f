import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterfield import presets
from scatterfield.metrics import (
    DegeneratePatchSetError,
    Detection,
    MatchConfig,
    detect,
    f1_vs_depth,
    match,
    pca_patches,
)
from scatterfield.volume import Emitter, Volume, rasterize

DESK = presets.DESK
Z_PLANES = DESK.z_planes_um()


def brute_force_max_matches(allowed: np.ndarray) -> int:
    """Exhaustive maximum bipartite matching size (rows = detections)."""
    n_det, n_gt = allowed.shape
    if n_det == 0 or n_gt == 0:
        return 0
    best = 0
    gt_indices = range(n_gt)
    k_max = min(n_det, n_gt)
    for k in range(k_max, 0, -1):
        for det_subset in itertools.combinations(range(n_det), k):
            for gt_perm in itertools.permutations(gt_indices, k):
                if all(allowed[d, g] for d, g in zip(det_subset, gt_perm)):
                    return k
    return best


def emitters_from_points(points):
    return [Emitter(x, y, z, 15.0, 0.8) for x, y, z in points]


def detections_from_points(points):
    return [Detection(x, y, z, 1.0) for x, y, z in points]


class TestDetect:
    def test_all_zero_volume(self):
        vol = rasterize([], DESK.recipe())
        assert detect(vol) == []

    def test_single_bead_centroid(self):
        # 25 um bead so the central voxel reaches full brightness (a 15 um bead
        # fills only ~60% of the 25 um slab and would sit below the 0.5 default)
        recipe = DESK.recipe()
        e = Emitter(12.0, -8.0, 25.0, 25.0, 0.8)  # centered on plane 4
        vol = rasterize([e], recipe)
        dets = detect(vol, MatchConfig(intensity_threshold=0.5))
        assert len(dets) == 1
        d = dets[0]
        assert abs(d.x_um - e.x_um) <= 0.5 * 4.15
        assert abs(d.y_um - e.y_um) <= 0.5 * 4.15
        assert abs(d.z_um - e.z_um) <= 0.5 * 25.0
        assert d.peak_value == pytest.approx(0.8, abs=1e-9)

    def test_two_separated_beads(self):
        recipe = DESK.recipe()
        es = [Emitter(-60.0, 0.0, 0.0, 25.0, 0.8), Emitter(60.0, 0.0, 0.0, 25.0, 0.8)]
        dets = detect(rasterize(es, recipe), MatchConfig(intensity_threshold=0.5))
        assert len(dets) == 2

    def test_threshold_flag(self):
        recipe = DESK.recipe()
        vol = rasterize([Emitter(0.0, 0.0, 0.0, 15.0, 0.8)], recipe)
        assert detect(vol, MatchConfig(intensity_threshold=0.5)) == []
        assert len(detect(vol, MatchConfig(intensity_threshold=0.2))) == 1


class TestMatch:
    def test_perfect_predictions(self):
        gt = emitters_from_points([(0, 0, 0), (50, 50, 50), (-80, 30, -50)])
        dets = detections_from_points([(0, 0, 0), (50, 50, 50), (-80, 30, -50)])
        report = match(dets, gt, MatchConfig(), Z_PLANES)
        assert report.f1 == 1.0
        for b in report.bins.values():
            if b.tp + b.fn > 0:
                assert b.f1 == 1.0

    def test_empty_detections(self):
        gt = emitters_from_points([(0, 0, 0), (50, 50, 50)])
        report = match([], gt, MatchConfig(), Z_PLANES)
        assert report.recall == 0.0
        assert report.precision == 0.0
        assert report.f1 == 0.0
        assert report.fn == 2

    def test_fp_binned_by_detection_depth(self):
        report = match(detections_from_points([(0, 0, 100)]), [], MatchConfig(), Z_PLANES)
        assert report.bins[100.0].fp == 1

    def test_tolerance_gating(self):
        gt = emitters_from_points([(0, 0, 0)])
        cfg = MatchConfig(lateral_tol_um=8.3, axial_tol_um=25.0)
        ok = match(detections_from_points([(8.0, 0, 24.0)]), gt, cfg, Z_PLANES)
        assert ok.tp == 1
        too_far_lateral = match(detections_from_points([(8.4, 0, 0)]), gt, cfg, Z_PLANES)
        assert too_far_lateral.tp == 0
        too_far_axial = match(detections_from_points([(0, 0, 26.0)]), gt, cfg, Z_PLANES)
        assert too_far_axial.tp == 0

    def test_hungarian_beats_greedy_on_crafted_instance(self):
        # greedy grabs the closest pair and strands the second detection
        gt = emitters_from_points([(0, 0, 0), (6, 0, 0)])
        dets = detections_from_points([(3, 0, 0), (-4, 0, 0)])
        cfg = MatchConfig(lateral_tol_um=8.0)
        hungarian = match(dets, gt, cfg, Z_PLANES)
        assert hungarian.tp == 2

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_hungarian_equals_brute_force(self, data):
        n_det = data.draw(st.integers(0, 6))
        n_gt = data.draw(st.integers(0, 6))
        coord = st.floats(-40, 40, allow_nan=False)
        dets = detections_from_points(
            [(data.draw(coord), data.draw(coord), data.draw(coord) * 2) for _ in range(n_det)]
        )
        gt = emitters_from_points(
            [(data.draw(coord), data.draw(coord), data.draw(coord) * 2) for _ in range(n_gt)]
        )
        cfg = MatchConfig(lateral_tol_um=20.0, axial_tol_um=30.0)
        allowed = np.zeros((n_det, n_gt), dtype=bool)
        for i, d in enumerate(dets):
            for j, e in enumerate(gt):
                allowed[i, j] = (
                    math.hypot(d.x_um - e.x_um, d.y_um - e.y_um) <= cfg.lateral_tol_um
                    and abs(d.z_um - e.z_um) <= cfg.axial_tol_um
                )
        report = match(dets, gt, cfg, Z_PLANES)
        assert report.tp == brute_force_max_matches(allowed)

    def test_matching_invariant_under_detection_relabeling(self):
        rng = np.random.default_rng(0)
        gt = emitters_from_points(rng.uniform(-60, 60, size=(6, 3)))
        pts = rng.uniform(-60, 60, size=(7, 3))
        dets = detections_from_points(pts)
        cfg = MatchConfig(lateral_tol_um=30.0, axial_tol_um=40.0)
        base = match(dets, gt, cfg, Z_PLANES)
        perm = rng.permutation(len(dets))
        shuffled = match([dets[i] for i in perm], gt, cfg, Z_PLANES)
        assert shuffled.tp == base.tp and shuffled.fp == base.fp and shuffled.fn == base.fn

    def test_removing_tp_never_increases_f1(self):
        rng = np.random.default_rng(1)
        gt = emitters_from_points(rng.uniform(-60, 60, size=(5, 3)))
        dets = detections_from_points([(e.x_um + 1, e.y_um, e.z_um) for e in gt])
        cfg = MatchConfig()
        full = match(dets, gt, cfg, Z_PLANES)
        for drop in range(len(dets)):
            reduced = match(dets[:drop] + dets[drop + 1 :], gt, cfg, Z_PLANES)
            assert reduced.f1 <= full.f1 + 1e-12


class TestF1VsDepth:
    def _report(self, dets, gt):
        return match(dets, gt, MatchConfig(), Z_PLANES)

    def test_single_sample_zero_stderr(self):
        gt = emitters_from_points([(0, 0, 0), (30, 0, 50)])
        rows = f1_vs_depth([self._report(detections_from_points([(0, 0, 0)]), gt)], 80.0)
        assert all(r["stderr"] == 0.0 for r in rows)

    def test_perfect_predictor_flat_curve(self):
        rng = np.random.default_rng(2)
        reports = []
        for _ in range(25):
            pts = rng.uniform(-60, 60, size=(6, 3))
            pts[:, 2] *= 1.5
            gt = emitters_from_points(pts)
            reports.append(self._report(detections_from_points(pts), gt))
        rows = f1_vs_depth(reports, 80.0)
        assert rows and all(r["f1"] == 1.0 for r in rows)
        assert all(r["stderr"] == 0.0 for r in rows)

    def test_empty_bins_omitted(self):
        gt = emitters_from_points([(0, 0, float(Z_PLANES[0]))])
        rows = f1_vs_depth([self._report([], gt)], 80.0)
        assert [r["z_um"] for r in rows] == [float(Z_PLANES[0])]

    def test_normalized_depth_column(self):
        gt = emitters_from_points([(0, 0, float(Z_PLANES[4]))])
        rows = f1_vs_depth([self._report([], gt)], 80.0, surface_z_um=float(Z_PLANES[0]))
        assert rows[0]["z_over_ls"] == pytest.approx((Z_PLANES[4] - Z_PLANES[0]) / 80.0)


class TestPcaPatches:
    def _locations(self, n, rng):
        return rng.integers(16, 112, size=(n, 2))

    def test_identical_patches_zero_scores(self):
        img = np.zeros((128, 128))
        locs = np.array([[40, 40], [80, 80], [40, 80]])
        rows = pca_patches([("a", img, locs)])
        assert all(abs(r["pc1"]) < 1e-9 and abs(r["pc2"]) < 1e-9 for r in rows)

    def test_rank_one_data_second_component_zero(self):
        rng = np.random.default_rng(0)
        template = rng.uniform(size=(128, 128))
        locs = np.array([[40, 40]] * 1)
        sources = [(f"s{k}", template * (k + 1), np.array([[64, 64]])) for k in range(5)]
        rows = pca_patches(sources)
        assert any(abs(r["pc1"]) > 1e-6 for r in rows)
        assert all(abs(r["pc2"]) < 1e-8 for r in rows)

    def test_reconstruction_error_nonincreasing_and_zero_at_full_rank(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(256, 256))
        locs = rng.integers(16, 240, size=(10, 2))
        from scatterfield.metrics import extract_patches

        x = extract_patches(img, locs).reshape(10, -1)
        xc = x - x.mean(axis=0, keepdims=True)
        u, s, vt = np.linalg.svd(xc, full_matrices=False)
        prev = np.inf
        for k in range(1, 10):
            approx = (u[:, :k] * s[:k]) @ vt[:k]
            err = float(((xc - approx) ** 2).sum())
            assert err <= prev + 1e-9
            prev = err
        assert prev < 1e-16 * (xc**2).sum() + 1e-12

    def test_scores_invariant_up_to_sign_under_reordering(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(size=(128, 128))
        locs = self._locations(6, rng)
        rows = pca_patches([("a", img, locs)])
        rows_rev = pca_patches([("a", img, locs[::-1])])
        a = np.array([[r["pc1"], r["pc2"]] for r in rows])
        b = np.array([[r["pc1"], r["pc2"]] for r in rows_rev])[::-1]
        for col in range(2):
            assert np.allclose(a[:, col], b[:, col], atol=1e-8) or np.allclose(
                a[:, col], -b[:, col], atol=1e-8
            )

    def test_too_few_patches_rejected(self):
        with pytest.raises(DegeneratePatchSetError):
            pca_patches([("a", np.zeros((64, 64)), np.array([[32, 32]]))])

    def test_border_location_rejected(self):
        with pytest.raises(ValueError, match="border"):
            pca_patches([("a", np.zeros((64, 64)), np.array([[8, 32], [32, 32]]))])


def test_volume_coordinate_round_trip():
    # detection coordinates come back in the emitter's frame
    recipe = DESK.recipe()
    e = Emitter(-37.35, 24.9, 25.0, 25.0, 0.9)
    vol = rasterize([e], recipe)
    d = detect(vol, MatchConfig(intensity_threshold=0.5))[0]
    report = match(d and [d], [e], MatchConfig(), Z_PLANES)
    assert report.tp == 1
