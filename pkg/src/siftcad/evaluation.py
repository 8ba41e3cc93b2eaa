"""Label fusion, the end-to-end detection pipeline, and evaluation metrics.

Detections carry original-resolution masks with lesion and malignancy
scores. Overlapping detections are fused down to the highest-scoring
region, lesion detection is scored with FROC/ROC curves under a
DSI >= 0.2 match rule, candidate generation quality with ARCG, and
malignancy identification with its own curves where benign-lesion hits
count as false positives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .candidates import RegionCandidate, diameter_to_volume, generate_candidates
from .candidates import DEFAULT_MIN_DIAMETER_MM, DEFAULT_MAX_DIAMETER_MM
from .classifiers import predict
from .features import FeatureExtractor
from .nrrd_io import save_mask
from .volume import BinaryMask, VolumeError, dsi

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


# ---------------------------------------------------------------------------
# detections and label fusion
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Detection:
    """A surviving region at original resolution with its scores."""

    mask: BinaryMask
    lesion_score: float
    scale_index: int = 1
    threshold_index: int = 0
    malignancy_score: float | None = None
    malignant: bool | None = None

    def __post_init__(self):
        if self.mask.count == 0:
            raise VolumeError("detections need a non-empty mask")
        if not 0.0 <= self.lesion_score <= 1.0:
            raise VolumeError(
                f"lesion score must be in [0,1], got {self.lesion_score}")
        if self.malignancy_score is not None and \
                not 0.0 <= self.malignancy_score <= 1.0:
            raise VolumeError(
                f"malignancy score must be in [0,1], got {self.malignancy_score}")


def fuse_labels(detections) -> list[Detection]:
    """Keep one detection per group of transitively overlapping masks.

    Overlap means sharing at least one voxel. Within a group the
    highest lesion score wins; ties go to the larger region, then the
    lower scale index, then input order. Survivors keep input order and
    are pairwise disjoint.
    """
    n = len(detections)
    if n <= 1:
        return list(detections)
    dims = detections[0].mask.dims
    for d in detections:
        if d.mask.dims != dims:
            raise VolumeError("detections must share one grid")
    idxs = [np.flatnonzero(d.mask.data.ravel()) for d in detections]

    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) != find(j) and \
                    np.intersect1d(idxs[i], idxs[j], assume_unique=True).size:
                parent[find(j)] = find(i)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    keep = []
    for members in groups.values():
        best = max(members, key=lambda k: (
            detections[k].lesion_score,
            detections[k].mask.count,
            -detections[k].scale_index,
        ))
        keep.append(best)
    return [detections[k] for k in sorted(keep)]


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineParams:
    """Knobs for candidate generation and the two decision thresholds."""

    m_scales: int = 3
    n_orient: int = 10
    t_count: int = 16
    min_diameter_mm: float = DEFAULT_MIN_DIAMETER_MM
    max_diameter_mm: float = DEFAULT_MAX_DIAMETER_MM
    theta_lesion: float = 0.5
    theta_malig: float = 0.5

    def volume_window(self) -> tuple[float, float]:
        return (diameter_to_volume(self.min_diameter_mm),
                diameter_to_volume(self.max_diameter_mm))


def run_pipeline(case, lesion_model, malignancy_model=None,
                 params: PipelineParams | None = None) -> list[Detection]:
    """Candidates -> features -> lesion scoring -> fusion -> malignancy.

    Candidates scoring at least ``theta_lesion`` are upscaled to the
    original grid and fused; survivors get a malignancy score when a
    malignancy model is supplied, flagged at ``theta_malig``. With the
    inputs and models fixed the output is deterministic.
    """
    params = params or PipelineParams()
    v_min, v_max = params.volume_window()
    candidates = generate_candidates(
        case, m_scales=params.m_scales, n_orient=params.n_orient,
        t_count=params.t_count, v_min=v_min, v_max=v_max)
    extractor = FeatureExtractor(case)
    kept = []
    for cand in candidates:
        vec = extractor.extract(cand)
        score = float(predict(lesion_model, vec))
        if score >= params.theta_lesion:
            kept.append((cand, vec, score))
    detections = [
        Detection(mask=cand.original_mask(), lesion_score=score,
                  scale_index=cand.scale_index,
                  threshold_index=cand.threshold_index)
        for cand, _, score in kept
    ]
    vec_of = {id(d): vec for d, (_, vec, _) in zip(detections, kept)}
    fused = fuse_labels(detections)
    if malignancy_model is not None:
        for det in fused:
            m = float(predict(malignancy_model, vec_of[id(det)]))
            det.malignancy_score = m
            det.malignant = m >= params.theta_malig
    return fused


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrocCurve:
    """Operating points, thresholds ascending (first = keep everything)."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpp: np.ndarray


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_curve(scores, labels) -> RocCurve:
    """Per-candidate ROC with trapezoid AUC.

    Tied scores collapse into a single operating point. Degenerate
    label sets fix the AUC by convention: no negatives -> 1.0 (nothing
    can be ranked wrongly), no positives -> 0.0, empty input -> nan.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if len(s) == 0:
        return RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), math.nan)
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    cuts = np.flatnonzero(np.r_[ss[1:] != ss[:-1], True])
    tp = np.cumsum(ys)[cuts].astype(np.float64)
    fp = (cuts + 1.0) - tp
    tpr = np.r_[0.0, tp / n_pos] if n_pos else np.zeros(len(cuts) + 1)
    fpr = np.r_[0.0, fp / n_neg] if n_neg else np.zeros(len(cuts) + 1)
    if n_pos == 0 and n_neg == 0:
        auc = math.nan
    elif n_neg == 0:
        auc = 1.0
    elif n_pos == 0:
        auc = 0.0
    else:
        auc = float(_trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, auc)


def tpr_at_fpp(froc: FrocCurve, fpp_budget: float) -> float:
    """Highest TPR among operating points with FPP within the budget."""
    ok = froc.fpp <= fpp_budget
    return float(froc.tpr[ok].max()) if ok.any() else 0.0


# ---------------------------------------------------------------------------
# detection metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionMetrics:
    """FROC over score thresholds, per-candidate ROC, and the
    keep-everything operating point."""

    froc: FrocCurve
    roc: RocCurve
    tpr: float
    fpp: float


def _match_matrix(dets, lesions, match_dsi):
    mat = np.zeros((len(dets), len(lesions)), dtype=bool)
    for i, det in enumerate(dets):
        for j, lesion in enumerate(lesions):
            mat[i, j] = dsi(det.mask, lesion) >= match_dsi
    return mat


def _froc_from_matches(scores_per_case, match_per_case, total_targets, n_cases):
    all_scores = np.concatenate([s for s in scores_per_case]) \
        if scores_per_case else np.zeros(0)
    if all_scores.size == 0:
        return FrocCurve(np.zeros(1), np.zeros(1), np.zeros(1))
    thresholds = np.unique(all_scores)
    tpr = np.zeros(len(thresholds))
    fpp = np.zeros(len(thresholds))
    for k, th in enumerate(thresholds):
        hit = 0
        false_pos = 0
        for scores, mat in zip(scores_per_case, match_per_case):
            active = scores >= th
            if mat.shape[1]:
                hit += int(mat[active].any(axis=0).sum())
            false_pos += int((active & ~mat.any(axis=1)).sum())
        tpr[k] = hit / total_targets if total_targets else 0.0
        fpp[k] = false_pos / n_cases
    return FrocCurve(thresholds, tpr, fpp)


def detection_metrics(detections_per_case, truths_per_case,
                      match_dsi: float = 0.2) -> DetectionMetrics:
    """Lesion-detection FROC/ROC over per-case detection lists.

    A lesion counts as detected when some kept detection overlaps it
    with DSI >= ``match_dsi``; detections overlapping no lesion are the
    false positives, normalized per case. The ROC scores detections as
    lesion vs normal under the same match rule.
    """
    if len(detections_per_case) != len(truths_per_case):
        raise ValueError("need one truth list per case")
    n_cases = len(detections_per_case)
    if n_cases == 0:
        raise ValueError("need at least one case")
    total_lesions = sum(len(t) for t in truths_per_case)
    if total_lesions == 0:
        raise ValueError("no ground-truth lesions in any case")
    scores_pc, match_pc = [], []
    roc_scores, roc_labels = [], []
    for dets, lesions in zip(detections_per_case, truths_per_case):
        mat = _match_matrix(dets, lesions, match_dsi)
        scores = np.array([d.lesion_score for d in dets], dtype=np.float64)
        scores_pc.append(scores)
        match_pc.append(mat)
        roc_scores.extend(scores)
        roc_labels.extend(mat.any(axis=1) if len(dets) else [])
    froc = _froc_from_matches(scores_pc, match_pc, total_lesions, n_cases)
    roc = roc_curve(np.array(roc_scores), np.array(roc_labels, dtype=bool))
    return DetectionMetrics(froc, roc, float(froc.tpr[0]), float(froc.fpp[0]))


def arcg(candidates_per_case, truths_per_case) -> tuple[float, float]:
    """Mean and population std of each lesion's best candidate DSI.

    Lesions no candidate overlaps contribute 0. Accepts candidates as
    RegionCandidate (upscaled internally), Detection, or BinaryMask.
    """
    best = []
    for cands, lesions in zip(candidates_per_case, truths_per_case):
        masks = [_original_mask(c) for c in cands]
        for lesion in lesions:
            score = 0.0
            for m in masks:
                score = max(score, dsi(m, lesion))
            best.append(score)
    if not best:
        return 0.0, 0.0
    arr = np.asarray(best)
    return float(arr.mean()), float(arr.std())


def _original_mask(obj) -> BinaryMask:
    if isinstance(obj, RegionCandidate):
        return obj.original_mask()
    if isinstance(obj, Detection):
        return obj.mask
    if isinstance(obj, BinaryMask):
        return obj
    raise TypeError(f"cannot take a mask from {type(obj).__name__}")


# ---------------------------------------------------------------------------
# malignancy metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MalignancyMetrics:
    froc: FrocCurve
    roc: RocCurve
    tpr: float
    fpp: float


def malignancy_metrics(detections_per_case, truths_per_case,
                       malignant_per_case, match_dsi: float = 0.2
                       ) -> MalignancyMetrics:
    """Malignancy identification curves over scored detections.

    Sweeps the malignancy threshold: a true positive is a malignant
    lesion matched by a flagged detection; every other flagged
    detection is a false positive, so hits on benign lesions count
    against the system. Detections without a malignancy score are
    ignored.
    """
    if not len(detections_per_case) == len(truths_per_case) == \
            len(malignant_per_case):
        raise ValueError("need truths and malignancy flags for every case")
    n_cases = len(detections_per_case)
    if n_cases == 0:
        raise ValueError("need at least one case")
    total_malignant = sum(int(sum(flags)) for flags in malignant_per_case)
    scores_pc, match_pc = [], []
    roc_scores, roc_labels = [], []
    for dets, lesions, flags in zip(detections_per_case, truths_per_case,
                                    malignant_per_case):
        if len(lesions) != len(flags):
            raise ValueError("one malignancy flag per lesion required")
        scored = [d for d in dets if d.malignancy_score is not None]
        malignant_lesions = [m for m, f in zip(lesions, flags) if f]
        mat = _match_matrix(scored, malignant_lesions, match_dsi)
        scores = np.array([d.malignancy_score for d in scored],
                          dtype=np.float64)
        scores_pc.append(scores)
        match_pc.append(mat)
        roc_scores.extend(scores)
        roc_labels.extend(mat.any(axis=1) if len(scored) else [])
    froc = _froc_from_matches(scores_pc, match_pc, total_malignant, n_cases)
    roc = roc_curve(np.array(roc_scores), np.array(roc_labels, dtype=bool))
    return MalignancyMetrics(froc, roc, float(froc.tpr[0]), float(froc.fpp[0]))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _curve_payload(metrics) -> dict:
    auc = metrics.roc.auc
    return {
        "tpr": round(metrics.tpr, 6),
        "fpp": round(metrics.fpp, 6),
        "auc": None if math.isnan(auc) else round(auc, 6),
        "froc": {
            "thresholds": metrics.froc.thresholds.tolist(),
            "tpr": metrics.froc.tpr.tolist(),
            "fpp": metrics.froc.fpp.tolist(),
        },
        "roc": {
            "fpr": metrics.roc.fpr.tolist(),
            "tpr": metrics.roc.tpr.tolist(),
        },
    }


def write_report_json(path, detection: DetectionMetrics,
                      malignancy: MalignancyMetrics | None = None,
                      arcg_stats: tuple[float, float] | None = None,
                      extra: dict | None = None) -> None:
    """One JSON report with a single UTC timestamp line."""
    payload = {
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "detection": _curve_payload(detection),
    }
    if malignancy is not None:
        payload["malignancy"] = _curve_payload(malignancy)
    if arcg_stats is not None:
        payload["arcg"] = {"mean": round(arcg_stats[0], 6),
                           "std": round(arcg_stats[1], 6)}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_froc_csv(path, froc: FrocCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tpr", "fpp"])
        for th, tp, fp in zip(froc.thresholds, froc.tpr, froc.fpp):
            writer.writerow([repr(float(th)), repr(float(tp)), repr(float(fp))])


def write_roc_csv(path, roc: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for fp, tp in zip(roc.fpr, roc.tpr):
            writer.writerow([repr(float(fp)), repr(float(tp))])


def write_detection_masks(out_dir, case_id: str, detections) -> list[Path]:
    """One NRRD mask per detection, named by case and rank."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, det in enumerate(detections):
        p = out_dir / f"{case_id}_detection_{i:03d}.nrrd"
        save_mask(p, det.mask)
        paths.append(p)
    return paths
