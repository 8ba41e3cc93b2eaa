"""Tests for the synthetic case generator."""

import numpy as np
import pytest

from siftcad.candidates import (
    DEFAULT_MAX_DIAMETER_MM,
    DEFAULT_MIN_DIAMETER_MM,
    diameter_to_volume,
)
from siftcad.nrrd_io import load_case, load_manifest
from siftcad.phantom import (
    LesionSpec,
    PhantomSpec,
    analytic_lesion_volume_mm3,
    generate_case,
    generate_suite,
    kinetic_curve,
    lesion_mask,
    suite_specs,
)
from siftcad.volume import VolumeError, dsi

DIMS = (64, 64, 32)
SPACING = (1.0, 1.0, 1.3)
CENTRE = (30.0, 32.0, 20.8)


def _ball_spec(**kwargs):
    defaults = dict(dims=DIMS, spacing=SPACING,
                    lesions=(LesionSpec(centre_mm=CENTRE, diameter_mm=10.0),),
                    noise_sigma=0.0, seed=7)
    defaults.update(kwargs)
    return PhantomSpec(**defaults)


def _arrays(case):
    return [case.t1.data, case.t2.data] + [f.data for f in case.dce]


class TestGenerateCase:
    def test_same_seed_bit_identical(self):
        spec = _ball_spec(noise_sigma=5.0, clutter_amp=0.3)
        a, _, _ = generate_case(spec)
        b, _, _ = generate_case(spec)
        for va, vb in zip(_arrays(a), _arrays(b)):
            assert (va == vb).all()

    def test_different_seed_differs(self):
        a, _, _ = generate_case(_ball_spec(noise_sigma=5.0, seed=1))
        b, _, _ = generate_case(_ball_spec(noise_sigma=5.0, seed=2))
        assert not (a.dce[1].data == b.dce[1].data).all()

    def test_programmed_curve_recovered_exactly(self):
        # noiseless ball: per-frame region-mean relative enhancement
        # must reproduce the programmed kinetic curve
        spec = _ball_spec()
        case, truths, _ = generate_case(spec)
        region = truths[0].data
        curve = kinetic_curve("malignant-washout")
        pre = case.dce[0].data[region].mean()
        for i, t in enumerate(spec.times[1:], start=1):
            measured = (case.dce[i].data[region].mean() - pre) / pre
            assert measured == pytest.approx(curve(t), abs=1e-6)

    def test_clutter_spares_lesion_voxels(self):
        # even with clutter on, lesion voxels follow the pure curve
        spec = _ball_spec(clutter_amp=0.5)
        case, truths, _ = generate_case(spec)
        region = truths[0].data
        curve = kinetic_curve("malignant-washout")
        ratio = case.dce[1].data[region] / case.dce[0].data[region]
        assert np.allclose(ratio, 1.0 + curve(spec.times[1]), atol=1e-9)

    def test_revoxelized_truth_matches_stored(self):
        spec = _ball_spec()
        _, truths, _ = generate_case(spec)
        again = lesion_mask(spec.lesions[0], spec.dims, spec.spacing)
        assert dsi(again, truths[0]) == 1.0

    def test_lesion_outside_breast_raises(self):
        spec = _ball_spec(
            lesions=(LesionSpec(centre_mm=(2.0, 2.0, 2.0), diameter_mm=8.0),))
        with pytest.raises(VolumeError):
            generate_case(spec)

    def test_malignancy_labels_follow_kinetics(self):
        spec = _ball_spec(lesions=(
            LesionSpec(centre_mm=CENTRE, diameter_mm=8.0,
                       kinetic="benign-persistent"),))
        _, _, malignant = generate_case(spec)
        assert malignant == [False]

    def test_case_invariants(self):
        case, truths, _ = generate_case(_ball_spec(noise_sigma=3.0))
        assert case.breast_mask.count > 0
        assert case.fat_mask.count > 0
        assert not (case.fat_mask.data & ~case.breast_mask.data).any()
        assert len(case.dce) == 4 and len(case.acquisition_times) == 4
        assert truths[0].count > 0
        assert not (truths[0].data & ~case.breast_mask.data).any()

    def test_t1_fat_brighter_than_gland(self):
        case, _, _ = generate_case(_ball_spec())
        fat = case.fat_mask.data
        gland = case.breast_mask.data & ~fat
        assert case.t1.data[fat].mean() > 1.5 * case.t1.data[gland].mean()

    def test_rim_brightens_t2_shell(self):
        plain = _ball_spec()
        rimmed = _ball_spec(lesions=(
            LesionSpec(centre_mm=CENTRE, diameter_mm=10.0, rim=True),))
        c0, truths, _ = generate_case(plain)
        c1, _, _ = generate_case(rimmed)
        shell = c1.t2.data != c0.t2.data
        assert shell.any()
        assert not (shell & truths[0].data).any()
        assert c1.t2.data[shell].min() > c0.t2.data[truths[0].data].max()

    def test_noise_perturbs_all_volumes(self):
        quiet, _, _ = generate_case(_ball_spec(seed=3))
        noisy, _, _ = generate_case(_ball_spec(seed=3, noise_sigma=4.0))
        for vq, vn in zip(_arrays(quiet), _arrays(noisy)):
            assert not (vq == vn).all()


class TestShapes:
    @pytest.mark.parametrize("shape,diameter", [
        ("ball", 6.0), ("ball", 10.0), ("lobulated", 12.0),
        ("segmental-nml", 16.0)])
    def test_analytic_and_voxel_volume_agree(self, shape, diameter):
        lesion = LesionSpec(centre_mm=(35.0, 32.0, 20.8), diameter_mm=diameter,
                            shape=shape, variant=3)
        m = lesion_mask(lesion, (96, 96, 48), (0.8, 0.8, 1.3))
        voxel = m.count * 0.8 * 0.8 * 1.3
        analytic = analytic_lesion_volume_mm3(lesion)
        assert voxel == pytest.approx(analytic, rel=0.10)

    def test_ball_volume_is_exact_formula(self):
        lesion = LesionSpec(centre_mm=CENTRE, diameter_mm=10.0)
        assert analytic_lesion_volume_mm3(lesion) == pytest.approx(
            np.pi / 6.0 * 1000.0)

    def test_composite_shapes_have_multiple_components(self):
        from siftcad.phantom import lesion_components
        lob = LesionSpec(centre_mm=CENTRE, diameter_mm=12.0, shape="lobulated")
        seg = LesionSpec(centre_mm=CENTRE, diameter_mm=16.0,
                         shape="segmental-nml")
        assert len(lesion_components(lob)) == 4
        assert 3 <= len(lesion_components(seg)) <= 6

    def test_variant_changes_composite_layout(self):
        a = lesion_mask(LesionSpec(centre_mm=CENTRE, diameter_mm=14.0,
                                   shape="segmental-nml", variant=1),
                        DIMS, SPACING)
        b = lesion_mask(LesionSpec(centre_mm=CENTRE, diameter_mm=14.0,
                                   shape="segmental-nml", variant=2),
                        DIMS, SPACING)
        assert not (a.data == b.data).all()

    def test_diameter_bounds(self):
        with pytest.raises(VolumeError):
            LesionSpec(centre_mm=CENTRE, diameter_mm=3.9)
        with pytest.raises(VolumeError):
            LesionSpec(centre_mm=CENTRE, diameter_mm=63.1)

    def test_unknown_shape_and_kinetic(self):
        with pytest.raises(VolumeError):
            LesionSpec(centre_mm=CENTRE, diameter_mm=10.0, shape="spiky")
        with pytest.raises(VolumeError):
            LesionSpec(centre_mm=CENTRE, diameter_mm=10.0, kinetic="plateau")
        with pytest.raises(VolumeError):
            kinetic_curve("plateau")


class TestKinetics:
    def test_washout_peaks_then_declines(self):
        curve = kinetic_curve("malignant-washout")
        e = [curve(t) for t in (90.0, 180.0, 270.0)]
        assert e[0] == max(e)
        assert e[2] < 0.8 * e[0]

    def test_persistent_rises_monotonically(self):
        curve = kinetic_curve("benign-persistent")
        e = [curve(t) for t in (90.0, 180.0, 270.0)]
        assert e[0] < e[1] < e[2]

    def test_both_start_at_zero(self):
        for name in ("malignant-washout", "benign-persistent"):
            assert kinetic_curve(name)(0.0) == pytest.approx(0.0, abs=1e-12)


class TestSpecValidation:
    def test_times_need_two_increasing(self):
        with pytest.raises(VolumeError):
            PhantomSpec(times=(0.0,))
        with pytest.raises(VolumeError):
            PhantomSpec(times=(0.0, 90.0, 90.0))

    def test_negative_noise_rejected(self):
        with pytest.raises(VolumeError):
            PhantomSpec(noise_sigma=-1.0)


class TestSuite:
    KW = dict(dims=(64, 64, 32), spacing=(1.0, 1.0, 1.3),
              diameter_range_mm=(6.0, 16.0))

    def test_specs_deterministic(self):
        a = suite_specs(6, seed=5, **self.KW)
        b = suite_specs(6, seed=5, **self.KW)
        assert a == b

    def test_class_ratio_two_to_one(self):
        specs = suite_specs(9, seed=5, **self.KW)
        labels = [l.malignant for s in specs for l in s.lesions]
        n_mal = sum(labels)
        n_ben = len(labels) - n_mal
        assert abs(n_mal - 2 * n_ben) <= 2

    def test_shapes_mixed(self):
        specs = suite_specs(9, seed=5, **self.KW)
        shapes = {l.shape for s in specs for l in s.lesions}
        assert "ball" in shapes and "segmental-nml" in shapes

    def test_sizes_span_requested_range(self):
        specs = suite_specs(9, seed=5, **self.KW)
        ds = [l.diameter_mm for s in specs for l in s.lesions]
        assert min(ds) <= 8.0
        assert max(ds) >= 13.0

    def test_lesions_disjoint_within_case(self):
        specs = suite_specs(6, seed=5, **self.KW)
        multi = [s for s in specs if len(s.lesions) > 1]
        assert multi
        for s in multi:
            a = lesion_mask(s.lesions[0], s.dims, s.spacing)
            b = lesion_mask(s.lesions[1], s.dims, s.spacing)
            assert not (a.data & b.data).any()

    def test_volumes_within_global_window(self):
        specs = suite_specs(6, seed=5, **self.KW)
        v_min = diameter_to_volume(DEFAULT_MIN_DIAMETER_MM)
        v_max = diameter_to_volume(DEFAULT_MAX_DIAMETER_MM)
        for s in specs:
            for lesion in s.lesions:
                m = lesion_mask(lesion, s.dims, s.spacing)
                v = m.count * float(np.prod(s.spacing))
                assert v_min <= v <= v_max

    def test_written_suite_roundtrips(self, tmp_path):
        records = generate_suite(4, seed=5, out_dir=tmp_path, **self.KW)
        assert len(records) == 4
        assert (tmp_path / "manifest.json").exists()
        loaded = load_manifest(tmp_path / "manifest.json")
        assert [r.case_id for r in loaded] == [r.case_id for r in records]
        case = load_case(loaded[0])
        assert case.breast_mask.count > 0
        assert len(case.ground_truth) == len(loaded[0].malignant)
        spec = suite_specs(4, seed=5, **self.KW)[0]
        fresh, truths, _ = generate_case(spec)
        assert dsi(case.ground_truth[0], truths[0]) == 1.0

    def test_split_disjoint_and_balanced(self, tmp_path):
        records = generate_suite(4, seed=5, out_dir=tmp_path, **self.KW)
        train = [r.case_id for r in records if r.split == "train"]
        test = [r.case_id for r in records if r.split == "test"]
        assert len(train) == 2 and len(test) == 2
        assert not set(train) & set(test)

    def test_zero_cases_rejected(self):
        with pytest.raises(VolumeError):
            suite_specs(0, seed=5)
