import csv

import numpy as np
import pytest

from siftcad.candidates import candidate_from_mask, generate_candidates
from siftcad.features import (
    FEATURE_SCHEMA,
    FeatureExtractor,
    FeatureVector,
    GLCM_DIRECTIONS,
    HARALICK_NAMES,
    enhancement_model,
    erode_mm,
    extract_features,
    feature_index,
    haralick_features,
    kinetic_features,
    margin_sharpness,
    pearson_kurtosis,
    radial_gradient_index,
    shape_features,
    shell_mask,
    skewness,
    write_features_csv,
)
from siftcad.volume import BinaryMask, BreastCase, Volume3D, VolumeError
from siftcad.wavelet import dims_ladder

from helpers import make_mini_case
from oracles import ball_mask, dice, glcm_contrast_paircount


def _ball_region(radius=10.0, dims=(40, 40, 40), spacing=(1.0, 1.0, 1.0)):
    centre = tuple(n * s / 2 for n, s in zip(dims, spacing))
    return BinaryMask(ball_mask(dims, spacing, centre, radius), spacing), centre


# ---------------------------------------------------------------------------
# shells
# ---------------------------------------------------------------------------

def test_shell_matches_analytic_band():
    region, centre = _ball_region(10.0)
    shell = shell_mask(region, 1.0, 2.0)
    analytic = ball_mask(region.dims, region.spacing, centre, 12.0) & ~ball_mask(
        region.dims, region.spacing, centre, 9.0 - 1e-6)
    assert dice(shell.mask.data, analytic) >= 0.95
    deep = ball_mask(region.dims, region.spacing, centre, 7.0)
    assert not (shell.mask.data & deep).any()


def test_shell_offset_validation():
    region, _ = _ball_region(5.0)
    with pytest.raises(VolumeError):
        shell_mask(region, 0.0, 0.0)
    with pytest.raises(VolumeError):
        shell_mask(region, -1.0, 2.0)
    outer_only = shell_mask(region, 0.0, 3.0)
    assert not (outer_only.mask.data & region.data).any()


def test_erode_mm_shrinks_ball():
    region, centre = _ball_region(8.0)
    core = erode_mm(region, 2.0)
    analytic = ball_mask(region.dims, region.spacing, centre, 6.0)
    assert dice(core.data, analytic) >= 0.85
    assert core.count < region.count


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

def test_skewness_of_symmetric_values_is_zero():
    vals = np.tile([-1.0, 0.0, 1.0], 500)
    assert abs(skewness(vals)) <= 1e-12
    assert skewness(np.full(10, 3.3)) == 0.0


def test_kurtosis_conventions():
    rng = np.random.default_rng(0)
    normal = rng.normal(0.0, 1.0, 40000)
    assert pearson_kurtosis(normal) == pytest.approx(3.0, abs=0.2)
    assert pearson_kurtosis(np.full(5, 2.0)) == 3.0


# ---------------------------------------------------------------------------
# Haralick texture
# ---------------------------------------------------------------------------

def test_direction_set_is_13_unique_up_to_sign():
    assert len(GLCM_DIRECTIONS) == 13
    seen = set()
    for off in GLCM_DIRECTIONS:
        assert off not in seen
        assert tuple(-o for o in off) not in seen
        seen.add(off)


def test_constant_region_texture():
    region, _ = _ball_region(5.0, dims=(16, 16, 16))
    stats, flag = haralick_features(region, np.full(region.dims, 7.0))
    assert not flag
    by_name = dict(zip(HARALICK_NAMES, stats))
    assert by_name["asm"] == 1.0
    assert by_name["contrast"] == 0.0
    assert by_name["entropy"] == 0.0
    assert by_name["idm"] == 1.0


def test_checkerboard_contrast_matches_pair_counting():
    dims = (8, 8, 8)
    grid = np.indices(dims).sum(axis=0) % 2
    data = grid.astype(np.float64) * 10.0 + 3.0
    region = np.zeros(dims, dtype=bool)
    region[2:7, 2:6, 1:6] = True
    stats, flag = haralick_features(BinaryMask(region, (1, 1, 1)), data)
    assert not flag
    contrast = stats[list(HARALICK_NAMES).index("contrast")]
    # two-level data quantizes to levels {0, 31}
    expected = glcm_contrast_paircount(grid * 31, region, GLCM_DIRECTIONS)
    assert contrast == pytest.approx(expected, rel=1e-12)


def test_texture_invariant_to_affine_rescaling():
    rng = np.random.default_rng(3)
    data = rng.normal(50.0, 12.0, (12, 12, 12))
    region = ball_mask((12, 12, 12), (1, 1, 1), (6, 6, 6), 4.5)
    mask = BinaryMask(region, (1, 1, 1))
    a, _ = haralick_features(mask, data)
    b, _ = haralick_features(mask, 3.0 * data + 11.0)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_degenerate_regions_flagged():
    data = np.arange(27.0).reshape(3, 3, 3)
    single = np.zeros((3, 3, 3), dtype=bool)
    single[1, 1, 1] = True
    stats, flag = haralick_features(BinaryMask(single, (1, 1, 1)), data)
    assert flag and np.all(stats == 0.0)
    scattered = np.zeros((7, 7, 7), dtype=bool)
    scattered[0, 0, 0] = True
    scattered[5, 5, 5] = True
    stats, flag = haralick_features(BinaryMask(scattered, (1, 1, 1)), np.zeros((7, 7, 7)))
    assert flag and np.all(stats == 0.0)


# ---------------------------------------------------------------------------
# margins
# ---------------------------------------------------------------------------

def test_bright_ball_rgi_is_strongly_negative():
    region, centre = _ball_region(8.0)
    data = 50.0 + 150.0 * region.data
    rgi, flag = radial_gradient_index(region, data, centre)
    assert not flag
    assert rgi <= -0.9


def test_blurring_reduces_margin_sharpness():
    from scipy import ndimage

    region, centre = _ball_region(8.0)
    data = 50.0 + 150.0 * region.data
    sharp, flag = margin_sharpness(region, data, centre)
    assert not flag and sharp > 0
    blurred, _ = margin_sharpness(region, ndimage.uniform_filter(data, 3), centre)
    assert blurred < sharp


def test_constant_volume_margins_are_zero():
    region, centre = _ball_region(6.0)
    sharp, _ = margin_sharpness(region, np.full(region.dims, 9.0), centre)
    rgi, _ = radial_gradient_index(region, np.full(region.dims, 9.0), centre)
    assert sharp == 0.0
    assert rgi == 0.0


# ---------------------------------------------------------------------------
# shape
# ---------------------------------------------------------------------------

def test_single_voxel_shape_values():
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[2, 2, 2] = True
    rc = candidate_from_mask(BinaryMask(mask, (1, 1, 1)))
    out = shape_features(rc)
    assert out["esd_mm"] == pytest.approx((6.0 / np.pi) ** (1 / 3), abs=1e-9)
    assert out["esd_mm"] == pytest.approx(1.2407, abs=1e-4)
    assert out["extent"] == 1.0
    assert out["solidity"] == 1.0
    assert out["irregularity"] == 0.0
    assert out["fat_fraction"] == 0.0


def test_digital_ball_shape_values():
    region, _ = _ball_region(8.0, dims=(24, 24, 24))
    rc = candidate_from_mask(region)
    out = shape_features(rc)
    assert abs(out["esd_mm"] - 16.0) / 16.0 <= 0.05
    assert out["solidity"] >= 0.95
    assert out["irregularity"] <= 0.15
    # digital bounding box spans 2r+1 voxels per axis, so the analytic
    # ratio is (4/3)pi r^3 / (2r+1)^3 rather than pi/6
    assert out["extent"] == pytest.approx(
        (4.0 / 3.0) * np.pi * 8.0**3 / 17.0**3, abs=0.03)


def test_fat_fraction_bounds():
    region, _ = _ball_region(5.0, dims=(16, 16, 16))
    rc = candidate_from_mask(region)
    assert shape_features(rc, np.zeros(region.dims, dtype=bool))["fat_fraction"] == 0.0
    assert shape_features(rc, np.ones(region.dims, dtype=bool))["fat_fraction"] == 1.0


def test_elongated_region_has_low_extent_sphericity():
    mask = np.zeros((30, 8, 8), dtype=bool)
    mask[2:28, 3:5, 3:5] = True
    mask[5, 5:7, 3] = True  # notch so the bbox is not tight
    rc = candidate_from_mask(BinaryMask(mask, (1, 1, 1)))
    out = shape_features(rc)
    assert out["extent"] < 0.9
    assert out["irregularity"] > 0.15


# ---------------------------------------------------------------------------
# kinetics
# ---------------------------------------------------------------------------

def _lesion_candidate(case: BreastCase):
    return candidate_from_mask(case.ground_truth[0])


def test_washout_fixture_values():
    case = make_mini_case(enhancement=(1.0, 0.8, 0.6), times=(0.0, 90.0, 180.0, 270.0))
    feats, flags = kinetic_features(_lesion_candidate(case), case)
    assert feats["enh_peak"] == pytest.approx(1.0, rel=1e-9)
    assert feats["enh_time_to_peak_s"] == 90.0
    assert feats["enh_uptake_rate"] == pytest.approx(1.0 / 90.0, rel=1e-9)
    assert feats["enh_washout_rate"] == pytest.approx(0.4 / 180.0, rel=1e-9)
    assert not flags["kinetic_guarded"]


def test_persistent_curve_has_zero_washout():
    case = make_mini_case(enhancement=(0.4, 0.7, 0.9), times=(0.0, 90.0, 180.0, 270.0))
    feats, _ = kinetic_features(_lesion_candidate(case), case)
    assert feats["enh_peak"] == pytest.approx(0.9, rel=1e-9)
    assert feats["enh_time_to_peak_s"] == 270.0
    assert feats["enh_washout_rate"] == 0.0


def test_flat_curve_gives_zero_kinetics():
    case = make_mini_case(enhancement=(0.0, 0.0, 0.0))
    feats, _ = kinetic_features(_lesion_candidate(case), case)
    for name in ("enh_peak", "enh_time_to_peak_s", "enh_uptake_rate",
                 "enh_washout_rate", "blooming"):
        assert feats[name] == 0.0
    # the parametric fit still runs; it should land on (approximately) zero
    assert abs(feats["fit_amplitude"]) <= 1e-9
    assert abs(feats["fit_rmse"]) <= 1e-9


def test_enhancement_invariant_to_global_intensity_scale():
    case = make_mini_case(enhancement=(1.0, 0.8, 0.6))
    scaled = BreastCase(
        case_id="x", side=case.side, t1=case.t1, t2=case.t2,
        dce=[Volume3D(2.5 * v.data, v.spacing) for v in case.dce],
        acquisition_times=case.acquisition_times,
        breast_mask=case.breast_mask, fat_mask=case.fat_mask,
        ground_truth=case.ground_truth,
    )
    a, _ = kinetic_features(_lesion_candidate(case), case)
    b, _ = kinetic_features(_lesion_candidate(scaled), scaled)
    for name in ("enh_peak", "enh_washout_rate", "blooming", "peripheral_uptake"):
        assert a[name] == pytest.approx(b[name], rel=1e-9)


def test_parametric_fit_recovers_model_curve():
    times = (0.0, 60.0, 120.0, 180.0, 300.0)
    target = enhancement_model(np.array(times[1:]), 1.2, 0.03, 0.002)
    case = make_mini_case(enhancement=tuple(target), times=times)
    feats, flags = kinetic_features(_lesion_candidate(case), case)
    assert not flags["fit_fallback"]
    assert feats["fit_rmse"] <= 1e-6
    assert feats["fit_amplitude"] == pytest.approx(1.2, rel=0.02)
    assert feats["fit_alpha"] == pytest.approx(0.03, rel=0.05)


def test_blooming_sign_tracks_rim_growth():
    dims, spacing = (40, 40, 20), (1.0, 1.0, 1.0)
    centre = (20.0, 20.0, 10.0)
    breast = ball_mask(dims, spacing, centre, 18.0)
    lesion = ball_mask(dims, spacing, centre, 5.0)
    core_zone = ball_mask(dims, spacing, centre, 4.0)
    rim_zone = ball_mask(dims, spacing, centre, 7.5) & ~core_zone
    rim_curve = (0.2, 0.5, 0.9)
    core_curve = (1.0, 0.7, 0.4)

    def build(rim, core):
        frames = [Volume3D(np.where(breast, 100.0, 5.0), spacing)]
        for er, ec in zip(rim, core):
            f = np.where(breast, 100.0, 5.0)
            f[rim_zone] *= 1.0 + er
            f[core_zone] *= 1.0 + ec
            frames.append(Volume3D(f, spacing))
        return BreastCase(
            case_id="bloom", side="left",
            t1=Volume3D(np.where(breast, 200.0, 5.0), spacing),
            t2=Volume3D(np.where(breast, 30.0, 2.0), spacing),
            dce=frames, acquisition_times=[0.0, 90.0, 180.0, 270.0],
            breast_mask=BinaryMask(breast, spacing),
            fat_mask=BinaryMask(breast & ~ball_mask(dims, spacing, centre, 9.0), spacing),
            ground_truth=[BinaryMask(lesion, spacing)],
        )

    blooming_case = build(rim_curve, core_curve)
    feats, _ = kinetic_features(_lesion_candidate(blooming_case), blooming_case)
    assert feats["blooming"] > 0.5
    assert feats["peripheral_uptake"] > 1.2
    reversed_case = build(core_curve, rim_curve)
    feats_rev, _ = kinetic_features(_lesion_candidate(reversed_case), reversed_case)
    assert feats_rev["blooming"] < -0.5


# ---------------------------------------------------------------------------
# full extraction
# ---------------------------------------------------------------------------

def test_extract_full_schema_and_determinism():
    case = make_mini_case(noise=0.5, clutter=2.0, seed=11)
    cands = generate_candidates(case)
    assert cands
    vectors = extract_features(case, cands)
    assert all(v.values.shape == (len(FEATURE_SCHEMA),) for v in vectors)
    assert all(np.isfinite(v.values).all() for v in vectors)
    extractor = FeatureExtractor(case)
    again = extractor.extract(cands[0])
    assert np.array_equal(again.values, vectors[0].values)


def test_edema_rim_raises_shell_percentile():
    plain = make_mini_case(seed=21)
    rimmed = make_mini_case(seed=21)
    centre = np.array(plain.dims) * np.array(plain.spacing) / 2.0
    centre[0] -= 6.0
    rim = ball_mask(plain.dims, plain.spacing, centre, 8.0) & ~ball_mask(
        plain.dims, plain.spacing, centre, 5.0)
    t2 = rimmed.t2.data.copy()
    t2[rim] = 400.0
    rimmed = BreastCase(
        case_id="rim", side="left", t1=rimmed.t1, t2=Volume3D(t2, rimmed.spacing),
        dce=rimmed.dce, acquisition_times=rimmed.acquisition_times,
        breast_mask=rimmed.breast_mask, fat_mask=rimmed.fat_mask,
        ground_truth=rimmed.ground_truth,
    )
    name = "edema_t2_p92_2mm"
    base = FeatureExtractor(plain).extract(_lesion_candidate(plain))[name]
    lifted = FeatureExtractor(rimmed).extract(_lesion_candidate(rimmed))[name]
    assert lifted >= 2.0 * base


def test_whole_vector_invariant_to_global_rescaling():
    case = make_mini_case(noise=0.5, seed=5)
    scaled = BreastCase(
        case_id="s", side="left",
        t1=Volume3D(4.0 * case.t1.data, case.spacing),
        t2=Volume3D(4.0 * case.t2.data, case.spacing),
        dce=[Volume3D(4.0 * v.data, v.spacing) for v in case.dce],
        acquisition_times=case.acquisition_times,
        breast_mask=case.breast_mask, fat_mask=case.fat_mask,
        ground_truth=case.ground_truth,
    )
    rc = _lesion_candidate(case)
    a = FeatureExtractor(case).extract(rc).values
    b = FeatureExtractor(scaled).extract(candidate_from_mask(scaled.ground_truth[0])).values
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_coarse_candidate_margin_fallback():
    # a full-width slab at 8x pitch only exposes flat faces, whose voxel
    # centres all sit several millimetres from the surface, so the 1-2 mm
    # margin shell is empty and the fallback flag must fire
    case = make_mini_case(dims=(64, 64, 32), lesion_radius_mm=16.0,
                          lesion_centre_mm=(32.0, 32.0, 20.8), seed=2)
    level4 = dims_ladder(case.dims, 4)[3]
    blob = np.zeros(level4, dtype=bool)
    blob[:, :, 1:3] = True
    spacing4 = tuple(s * 8 for s in case.spacing)
    rc = candidate_from_mask(
        BinaryMask(blob, spacing4), scale_index=4,
        original_dims=case.dims, original_spacing=case.spacing,
    )
    vec = FeatureExtractor(case).extract(rc)
    assert vec["flag_margin_shell_empty"] == 1.0
    assert vec["t2_margin_sharpness"] == 0.0
    assert np.isfinite(vec.values).all()


def test_csv_export_roundtrip(tmp_path):
    case = make_mini_case(noise=0.5, seed=11)
    rc = _lesion_candidate(case)
    vec = FeatureExtractor(case).extract(rc)
    path = tmp_path / "features.csv"
    write_features_csv(path, [(case.case_id, 0, 1, vec)])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["case_id", "candidate", "label", *FEATURE_SCHEMA]
    assert rows[1][0] == case.case_id
    assert rows[1][2] == "1"
    back = np.array([float(v) for v in rows[1][3:]])
    assert np.array_equal(back, vec.values)


def test_feature_vector_validation():
    with pytest.raises(VolumeError):
        FeatureVector(np.zeros(3))
    assert feature_index("esd_mm") == FEATURE_SCHEMA.index("esd_mm")
