import numpy as np
import pytest

from scatterfield import presets, stackio
from scatterfield.optics import (
    PsfFormatError,
    SensorTooSmallError,
    SpotOutOfBoundsError,
    SyntheticPsfParams,
    default_view_geometry,
    load_psf_stack,
    save_psf_stack,
    synthesize_psf_stack,
)

DESK = presets.DESK


def centroid(img):
    yy, xx = np.mgrid[: img.shape[0], : img.shape[1]]
    total = img.sum()
    return np.array([(yy * img).sum() / total, (xx * img).sum() / total])


def spot_centroid(img, near, radius=12):
    r, c = int(round(near[0])), int(round(near[1]))
    window = img[r - radius : r + radius + 1, c - radius : c + radius + 1]
    return centroid(window) + np.array([r - radius, c - radius])


class TestDefaultViewGeometry:
    def test_paper_sensor_disjoint_crops(self):
        geo = default_view_geometry((2076, 3088), view_size=512)
        bounds = [geo.crop_bounds(i) for i in range(9)]
        for r0, r1, c0, c1 in bounds:
            assert 0 <= r0 < r1 <= 2076
            assert 0 <= c0 < c1 <= 3088
            assert (r1 - r0, c1 - c0) == (512, 512)
        for i in range(9):
            for j in range(i + 1, 9):
                a, b = bounds[i], bounds[j]
                overlap_r = max(0, min(a[1], b[1]) - max(a[0], b[0]))
                overlap_c = max(0, min(a[3], b[3]) - max(a[2], b[2]))
                assert overlap_r == 0 or overlap_c == 0

    def test_sensor_too_small(self):
        with pytest.raises(SensorTooSmallError):
            default_view_geometry((1024, 1024), view_size=512)

    def test_centers_symmetric_under_reflection(self):
        geo = default_view_geometry((2076, 3088), view_size=512)
        reflected = np.stack(
            [2076 - 1 - geo.view_centers[:, 0], 3088 - 1 - geo.view_centers[:, 1]], axis=1
        )
        original = {tuple(c) for c in np.round(geo.view_centers, 9)}
        assert {tuple(c) for c in np.round(reflected, 9)} == original

    def test_central_view_has_zero_baseline(self):
        geo = DESK.geometry()
        assert np.all(geo.baseline_dirs[4] == 0.0)
        norms = np.linalg.norm(geo.baseline_dirs, axis=1)
        assert np.allclose(np.delete(norms, 4), 1.0)


class TestSynthesizePsf:
    def test_energy_normalized(self):
        psf = synthesize_psf_stack(DESK.psf_params(), DESK.geometry(), DESK.z_planes_um())
        for k in range(psf.n_planes):
            assert psf.kernel(k).sum() == pytest.approx(1.0, abs=1e-6)

    def test_zero_defocus_spots_at_view_centers(self):
        geo = DESK.geometry()
        psf = synthesize_psf_stack(DESK.psf_params(), geo, np.array([0.0]))
        kernel = psf.kernel(0)
        for i in range(9):
            assert np.allclose(spot_centroid(kernel, geo.view_centers[i]), geo.view_centers[i], atol=1e-3)

    def test_zero_kappa_centers_depth_independent(self):
        geo = default_view_geometry(DESK.sensor_shape, DESK.view_size, parallax_coeff=0.0)
        params = SyntheticPsfParams(kappa_px_per_um=0.0)
        psf = synthesize_psf_stack(params, geo, DESK.z_planes_um())
        assert np.allclose(psf.spots.centers[0], psf.spots.centers[-1])

    def test_corner_spot_parallax_displacement(self):
        # kappa = 0.1 px/um, corner baseline (1,1)/sqrt(2), dz = 100 um
        # -> displacement of 10/sqrt(2) px along each axis
        geo = default_view_geometry(DESK.sensor_shape, DESK.view_size, parallax_coeff=0.1)
        params = SyntheticPsfParams(kappa_px_per_um=0.1)
        psf = synthesize_psf_stack(params, geo, np.array([0.0, 100.0]))
        expected = geo.view_centers[8] + 10.0 / np.sqrt(2.0)
        assert np.allclose(psf.spots.centers[1, 8], expected, atol=1e-12)
        measured = spot_centroid(psf.kernel(1), expected)
        assert np.allclose(measured, expected, atol=1e-2)

    def test_parallax_linearity_between_planes(self):
        geo = DESK.geometry()
        psf = synthesize_psf_stack(DESK.psf_params(), geo, DESK.z_planes_um())
        z = DESK.z_planes_um()
        for i in (0, 2, 5, 8):
            c1 = spot_centroid(psf.kernel(1), psf.spots.centers[1, i])
            c6 = spot_centroid(psf.kernel(6), psf.spots.centers[6, i])
            expected = geo.parallax_coeff * (z[6] - z[1]) * geo.baseline_dirs[i]
            assert np.allclose(c6 - c1, expected, atol=0.02)

    def test_blur_monotone_in_defocus(self):
        psf = synthesize_psf_stack(DESK.psf_params(), DESK.geometry(), DESK.z_planes_um())
        defocus = np.abs(DESK.z_planes_um() - DESK.z_focus_um)
        order = np.argsort(defocus)
        assert np.all(np.diff(psf.spots.sigma_px[order]) >= 0)

    def test_central_view_spot_depth_independent(self):
        psf = synthesize_psf_stack(DESK.psf_params(), DESK.geometry(), DESK.z_planes_um())
        assert np.allclose(psf.spots.centers[:, 4, :], psf.spots.centers[0, 4, :])

    def test_spot_escape_error_lists_offenders(self):
        geo = default_view_geometry(DESK.sensor_shape, DESK.view_size, parallax_coeff=2.0)
        params = SyntheticPsfParams(kappa_px_per_um=2.0)
        with pytest.raises(SpotOutOfBoundsError) as err:
            synthesize_psf_stack(params, geo, np.array([0.0, 300.0]))
        views = {v for v, _ in err.value.offenders}
        zs = {z for _, z in err.value.offenders}
        assert 4 not in views  # central view never moves
        assert zs == {300.0}


class TestLoadPsf:
    def test_delta_stack_round_trip(self, tmp_path):
        kernels = np.zeros((8, 64, 64), dtype=np.float32)
        kernels[:, 32, 32] = 1.0
        stackio.write_stack(tmp_path / "psf.sbrb", kernels, {"axes": "z,y,x", "z0_um": -75.0, "dz_um": 25.0})
        psf = load_psf_stack(tmp_path / "psf.sbrb", expected_planes=8)
        assert psf.kernels.shape == (8, 64, 64)
        assert np.allclose(psf.z_planes_um, -75.0 + 25.0 * np.arange(8))

    def test_plane_count_mismatch(self, tmp_path):
        kernels = np.abs(np.random.default_rng(0).standard_normal((23, 16, 16))).astype(np.float32)
        stackio.write_stack(tmp_path / "psf.sbrb", kernels, {"axes": "z,y,x"})
        with pytest.raises(PsfFormatError, match="23 planes"):
            load_psf_stack(tmp_path / "psf.sbrb", expected_planes=24)

    def test_negative_values_rejected(self, tmp_path):
        kernels = np.full((2, 8, 8), -1.0, dtype=np.float32)
        stackio.write_stack(tmp_path / "psf.sbrb", kernels, {"axes": "z,y,x"})
        with pytest.raises(PsfFormatError, match="negative"):
            load_psf_stack(tmp_path / "psf.sbrb")

    def test_normalization_postcondition(self, tmp_path):
        rng = np.random.default_rng(1)
        kernels = rng.uniform(0.0, 3.0, size=(8, 32, 32)).astype(np.float32)
        stackio.write_stack(tmp_path / "psf.sbrb", kernels, {"axes": "z,y,x"})
        psf = load_psf_stack(tmp_path / "psf.sbrb")
        sums = psf.kernels.reshape(8, -1).sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-6)

    def test_save_then_load_synthetic(self, tmp_path):
        psf = synthesize_psf_stack(DESK.psf_params(), DESK.geometry(), DESK.z_planes_um())
        save_psf_stack(tmp_path / "psf.sbrb", psf)
        back = load_psf_stack(tmp_path / "psf.sbrb", expected_planes=DESK.n_planes)
        assert np.allclose(back.z_planes_um, psf.z_planes_um)
        assert np.allclose(back.kernels, psf.materialize(), atol=1e-6)


def test_geometry_and_psf_params_json_round_trip():
    import json

    geo = DESK.geometry()
    back = type(geo).from_dict(json.loads(json.dumps(geo.to_dict())))
    assert np.allclose(back.view_centers, geo.view_centers)
    assert np.allclose(back.baseline_dirs, geo.baseline_dirs)
    assert back.view_size == geo.view_size
    assert back.sensor_shape == geo.sensor_shape

    params = DESK.psf_params()
    back_p = SyntheticPsfParams.from_dict(json.loads(json.dumps(params.to_dict())))
    assert back_p == params
