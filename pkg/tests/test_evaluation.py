"""Fusion, pipeline wiring, and metric fixtures."""

import json

import numpy as np
import pytest

from siftcad.evaluation import (
    Detection,
    DetectionMetrics,
    FrocCurve,
    PipelineParams,
    arcg,
    detection_metrics,
    fuse_labels,
    malignancy_metrics,
    roc_curve,
    run_pipeline,
    tpr_at_fpp,
    write_detection_masks,
    write_froc_csv,
    write_report_json,
    write_roc_csv,
)
from siftcad.nrrd_io import load_mask
from siftcad.volume import BinaryMask, VolumeError, dsi

from helpers import make_mini_case
from oracles import ball_mask

DIMS = (16, 16, 8)
SP = (1.0, 1.0, 1.0)


def _bar(x0, x1, y=4, z=4):
    m = np.zeros(DIMS, dtype=bool)
    m[x0:x1, y, z] = True
    return BinaryMask(m, SP)


def _det(mask, score, **kw):
    return Detection(mask=mask, lesion_score=score, **kw)


# ---------------------------------------------------------------------------
# dsi
# ---------------------------------------------------------------------------

def test_dsi_identical_masks():
    a = _bar(0, 4)
    assert dsi(a, a) == 1.0


def test_dsi_disjoint_masks():
    assert dsi(_bar(0, 4), _bar(8, 12)) == 0.0


def test_dsi_half_overlap():
    # |a| = |b| = 4, intersection 2 -> 2*2 / 8 = 0.5
    assert dsi(_bar(0, 4), _bar(2, 6)) == 0.5


def test_dsi_empty_conventions():
    empty = BinaryMask(np.zeros(DIMS, dtype=bool), SP)
    assert dsi(empty, empty) == 1.0
    assert dsi(empty, _bar(0, 4)) == 0.0
    assert dsi(_bar(0, 4), empty) == 0.0


def test_dsi_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = BinaryMask(rng.random(DIMS) < 0.3, SP)
        b = BinaryMask(rng.random(DIMS) < 0.3, SP)
        assert dsi(a, b) == dsi(b, a)
        assert 0.0 <= dsi(a, b) <= 1.0


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def test_fuse_three_overlapping_keeps_highest_score():
    dets = [_det(_bar(0, 6), 0.7), _det(_bar(2, 8), 0.9), _det(_bar(4, 10), 0.8)]
    out = fuse_labels(dets)
    assert len(out) == 1
    assert out[0].lesion_score == 0.9


def test_fuse_disjoint_detections_survive():
    dets = [_det(_bar(0, 4), 0.7), _det(_bar(8, 12), 0.3)]
    assert fuse_labels(dets) == dets


def test_fuse_single_detection_identity():
    dets = [_det(_bar(0, 4), 0.5)]
    assert fuse_labels(dets) == dets


def test_fuse_transitive_overlap_is_one_group():
    # a-b overlap and b-c overlap, a-c do not; still one survivor
    dets = [_det(_bar(0, 5), 0.6), _det(_bar(4, 9), 0.5), _det(_bar(8, 13), 0.4)]
    out = fuse_labels(dets)
    assert len(out) == 1
    assert out[0].lesion_score == 0.6


def test_fuse_tie_prefers_larger_volume_then_lower_scale():
    small = _det(_bar(0, 4), 0.8, scale_index=1)
    large = _det(_bar(0, 8), 0.8, scale_index=2)
    assert fuse_labels([small, large]) == [large]
    coarse = _det(_bar(0, 4), 0.8, scale_index=3)
    fine = _det(_bar(2, 6), 0.8, scale_index=2)
    assert fuse_labels([coarse, fine]) == [fine]


def test_fused_output_pairwise_disjoint():
    rng = np.random.default_rng(1)
    dets = []
    for _ in range(12):
        x0 = int(rng.integers(0, 12))
        dets.append(_det(_bar(x0, x0 + 4, y=int(rng.integers(3, 6))),
                         float(rng.random())))
    out = fuse_labels(dets)
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert not (out[i].mask.data & out[j].mask.data).any()


def test_detection_validation():
    with pytest.raises(VolumeError):
        Detection(BinaryMask(np.zeros(DIMS, dtype=bool), SP), 0.5)
    with pytest.raises(VolumeError):
        Detection(_bar(0, 4), 1.5)


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------

def test_roc_perfect_separation():
    roc = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert roc.auc == 1.0


def test_roc_constant_score_is_half():
    roc = roc_curve([0.5] * 8, [1, 0, 1, 0, 1, 0, 1, 0])
    assert roc.auc == 0.5


def test_roc_reversed_ranking_is_zero():
    roc = roc_curve([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    assert roc.auc == 0.0


def test_roc_known_value():
    # one inversion among 2x2: AUC = 3/4 by pair counting
    roc = roc_curve([0.9, 0.4, 0.6, 0.2], [1, 1, 0, 0])
    assert roc.auc == 0.75


def test_roc_degenerate_conventions():
    assert roc_curve([0.5, 0.9], [1, 1]).auc == 1.0
    assert roc_curve([0.5, 0.9], [0, 0]).auc == 0.0
    assert np.isnan(roc_curve([], []).auc)


# ---------------------------------------------------------------------------
# detection metrics
# ---------------------------------------------------------------------------

def _micro_fixture():
    # case A: lesions L1 (hit at DSI 0.5), L2 (hit at DSI 0.5), one FP
    # case B: lesion L3 missed, one FP
    lesions_a = [_bar(0, 4, y=2), _bar(0, 4, y=6)]
    dets_a = [
        _det(_bar(2, 6, y=2), 0.9),
        _det(_bar(2, 6, y=6), 0.8),
        _det(_bar(10, 14, y=2), 0.7),
    ]
    lesions_b = [_bar(0, 4, y=4)]
    dets_b = [_det(_bar(8, 12, y=4), 0.6)]
    return [dets_a, dets_b], [lesions_a, lesions_b]


def test_detection_micro_fixture_counts():
    dets, truths = _micro_fixture()
    m = detection_metrics(dets, truths)
    assert m.tpr == pytest.approx(2.0 / 3.0)
    assert m.fpp == 1.0


def test_detection_perfect_detector():
    lesion = BinaryMask(ball_mask(DIMS, SP, (8, 8, 4), 3.0), SP)
    m = detection_metrics([[_det(lesion, 1.0)]], [[lesion]])
    assert m.tpr == 1.0
    assert m.fpp == 0.0
    assert m.roc.auc == 1.0


def test_detection_empty_detections():
    lesion = _bar(0, 4)
    m = detection_metrics([[]], [[lesion]])
    assert m.tpr == 0.0
    assert m.fpp == 0.0


def test_detection_requires_ground_truth():
    with pytest.raises(ValueError):
        detection_metrics([[_det(_bar(0, 4), 0.5)]], [[]])


def test_froc_monotone_in_threshold():
    dets, truths = _micro_fixture()
    froc = detection_metrics(dets, truths).froc
    assert np.all(np.diff(froc.tpr) <= 1e-12)
    assert np.all(np.diff(froc.fpp) <= 1e-12)


def test_tpr_at_fpp_budget():
    froc = FrocCurve(np.array([0.1, 0.5, 0.9]),
                     np.array([0.9, 0.6, 0.3]),
                     np.array([3.0, 1.0, 0.0]))
    assert tpr_at_fpp(froc, 4.0) == 0.9
    assert tpr_at_fpp(froc, 2.0) == 0.6
    assert tpr_at_fpp(froc, 0.0) == 0.3
    assert tpr_at_fpp(FrocCurve(np.zeros(1), np.zeros(1), np.ones(1)), 0.5) == 0.0


# ---------------------------------------------------------------------------
# ARCG
# ---------------------------------------------------------------------------

def test_arcg_perfect_candidates():
    lesion = _bar(0, 4)
    mean, std = arcg([[lesion]], [[lesion]])
    assert (mean, std) == (1.0, 0.0)


def test_arcg_no_candidates():
    assert arcg([[]], [[_bar(0, 4)]]) == (0.0, 0.0)


def test_arcg_mixed_values():
    # lesion 1 best DSI 0.5, lesion 2 uncovered -> mean 0.25, std 0.25
    lesions = [_bar(0, 4, y=2), _bar(0, 4, y=6)]
    cands = [_bar(2, 6, y=2)]
    mean, std = arcg([cands], [lesions])
    assert mean == pytest.approx(0.25)
    assert std == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# malignancy metrics
# ---------------------------------------------------------------------------

def test_malignancy_micro_fixture():
    # one case: malignant lesion hit by a flagged detection, benign
    # lesion hit by another flagged detection -> TPR 1.0, FPP 1.0
    malignant = _bar(0, 4, y=2)
    benign = _bar(0, 4, y=6)
    dets = [
        _det(_bar(1, 5, y=2), 0.9, malignancy_score=0.9, malignant=True),
        _det(_bar(1, 5, y=6), 0.8, malignancy_score=0.8, malignant=True),
    ]
    m = malignancy_metrics([dets], [[malignant, benign]], [[True, False]])
    assert m.tpr == 1.0
    assert m.fpp == 1.0


def test_malignancy_all_hits_malignant():
    lesion = _bar(0, 4)
    dets = [_det(_bar(0, 4), 0.9, malignancy_score=1.0, malignant=True)]
    m = malignancy_metrics([dets], [[lesion]], [[True]])
    assert m.tpr == 1.0
    assert m.fpp == 0.0


def test_malignancy_unscored_detections_ignored():
    lesion = _bar(0, 4)
    dets = [_det(_bar(0, 4), 0.9)]  # no malignancy score
    m = malignancy_metrics([dets], [[lesion]], [[True]])
    assert m.tpr == 0.0
    assert m.fpp == 0.0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class _ConstModel:
    schema_id = None

    def __init__(self, p):
        self.p = p

    def predict_proba(self, x):
        return np.full(len(x), self.p)


def test_pipeline_threshold_above_range_empty():
    case = make_mini_case(seed=3)
    out = run_pipeline(case, _ConstModel(1.0),
                       params=PipelineParams(theta_lesion=1.01))
    assert out == []


def test_pipeline_zero_threshold_returns_fused_set():
    case = make_mini_case(seed=3)
    out = run_pipeline(case, _ConstModel(0.5),
                       params=PipelineParams(theta_lesion=0.0))
    assert len(out) >= 1
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert not (out[i].mask.data & out[j].mask.data).any()
    # every surviving mask lives on the original grid
    assert all(d.mask.dims == case.dims for d in out)


def test_pipeline_malignancy_stage_flags_survivors():
    case = make_mini_case(seed=3)
    out = run_pipeline(case, _ConstModel(0.8), _ConstModel(0.7),
                       params=PipelineParams(theta_lesion=0.5, theta_malig=0.6))
    assert len(out) >= 1
    assert all(d.malignancy_score == 0.7 for d in out)
    assert all(d.malignant is True for d in out)
    low = run_pipeline(case, _ConstModel(0.8), _ConstModel(0.3),
                       params=PipelineParams(theta_lesion=0.5, theta_malig=0.6))
    assert all(d.malignant is False for d in low)


def test_pipeline_deterministic():
    case = make_mini_case(seed=5, noise=0.3)
    a = run_pipeline(case, _ConstModel(0.9), params=PipelineParams(theta_lesion=0.5))
    b = run_pipeline(case, _ConstModel(0.9), params=PipelineParams(theta_lesion=0.5))
    assert len(a) == len(b)
    for da, db in zip(a, b):
        assert np.array_equal(da.mask.data, db.mask.data)
        assert da.lesion_score == db.lesion_score


def test_pipeline_reaches_lesion_area_with_stub_models():
    # constant scores make fusion keep the largest region of each
    # overlap group, so only overlap (not a DSI level) is guaranteed
    case = make_mini_case(seed=3)
    out = run_pipeline(case, _ConstModel(0.9), params=PipelineParams(theta_lesion=0.5))
    truth = case.ground_truth[0]
    assert any((d.mask.data & truth.data).any() for d in out)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def test_report_files_roundtrip(tmp_path):
    dets, truths = _micro_fixture()
    dm = detection_metrics(dets, truths)
    mm = malignancy_metrics(
        [[_det(_bar(0, 4), 0.9, malignancy_score=0.9)], []],
        [[_bar(0, 4)], [_bar(0, 4)]],
        [[True], [False]])
    report = tmp_path / "report.json"
    write_report_json(report, dm, mm, arcg_stats=(0.5, 0.1),
                      extra={"cases": 2})
    doc = json.loads(report.read_text())
    assert "generated_at" in doc
    assert doc["detection"]["tpr"] == pytest.approx(2.0 / 3.0)
    assert doc["malignancy"]["tpr"] == 1.0
    assert doc["arcg"] == {"mean": 0.5, "std": 0.1}
    assert doc["cases"] == 2

    froc_csv = tmp_path / "froc.csv"
    write_froc_csv(froc_csv, dm.froc)
    lines = froc_csv.read_text().strip().splitlines()
    assert lines[0] == "threshold,tpr,fpp"
    assert len(lines) == len(dm.froc.thresholds) + 1

    roc_csv = tmp_path / "roc.csv"
    write_roc_csv(roc_csv, dm.roc)
    assert roc_csv.read_text().startswith("fpr,tpr")


def test_detection_masks_written_per_case(tmp_path):
    dets = [_det(_bar(0, 4), 0.9), _det(_bar(8, 12), 0.7)]
    paths = write_detection_masks(tmp_path, "caseX", dets)
    assert [p.name for p in paths] == [
        "caseX_detection_000.nrrd", "caseX_detection_001.nrrd"]
    back = load_mask(paths[0])
    assert np.array_equal(back.data, dets[0].mask.data)
