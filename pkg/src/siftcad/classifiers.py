"""From-scratch tree ensembles for region-candidate classification.

Decision trees with weighted Gini splits are the shared base learner.
A boosted ensemble with per-round random under-sampling separates
lesion candidates from normal tissue under heavy class imbalance; a
bagged forest with out-of-bag grid selection grades detected lesions
as malignant or benign.

Training functions operate on plain float matrices with labels in
{-1, +1}; ``LabeledSample`` and ``samples_to_arrays`` bridge from
schema-carrying feature vectors, and ``assign_training_labels`` maps
candidates to labels against ground-truth masks. With a fixed seed all
training is bit-reproducible.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureVector

DEFAULT_N_TREES = 2000
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_RF_NTREE_GRID = tuple(range(100, 1001, 100))
MODEL_FORMAT = "siftcad-model"
MODEL_VERSION = 1

# a boosting round whose balanced subsample still misclassifies half the
# total weight is redrawn at most this many times before training stops
_MAX_RESAMPLE = 10
_EPS_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# labeled samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSample:
    """A feature vector with a binary label and its case id (group)."""

    features: FeatureVector
    label: int
    group: str

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")
        if not np.isfinite(self.features.values).all():
            raise ValueError("sample features must be finite")


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray, list[str], str]:
    """Stack LabeledSamples into (X, y, groups, schema_id)."""
    if not samples:
        raise ValueError("need at least one sample")
    schema = samples[0].features.schema_id
    if any(s.features.schema_id != schema for s in samples):
        raise ValueError("samples mix feature schemas")
    x = np.stack([s.features.values for s in samples])
    y = np.array([s.label for s in samples], dtype=np.float64)
    groups = [s.group for s in samples]
    return x, y, groups, schema


@dataclass(frozen=True)
class CandidateLabel:
    """Training label for one candidate: +1 lesion, -1 normal, 0 neutral."""

    label: int
    lesion_index: int | None
    best_dsi: float


def _indices_dsi(a_idx: np.ndarray, a_n: int, b_idx: np.ndarray, b_n: int) -> float:
    if a_n == 0 and b_n == 0:
        return 1.0
    if a_n == 0 or b_n == 0:
        return 0.0
    inter = np.intersect1d(a_idx, b_idx, assume_unique=True).size
    return 2.0 * inter / (a_n + b_n)


def assign_training_labels(candidates, ground_truth) -> list[CandidateLabel]:
    """Three-way labels for candidates against ground-truth lesion masks.

    Overlap is measured at the original resolution (candidates are
    upscaled first). A candidate is positive iff it has the highest DSI
    to some lesion among all candidates and that DSI is at least 0.6;
    negative iff its DSI to every lesion is below 0.2; neutral
    otherwise. At most one candidate is positive per lesion.
    """
    n_c = len(candidates)
    n_l = len(ground_truth)
    cand_idx = [c.original_indices() for c in candidates]
    truth_idx = [np.flatnonzero(m.data.ravel()) for m in ground_truth]
    mat = np.zeros((n_c, n_l))
    for i, ci in enumerate(cand_idx):
        for j, tj in enumerate(truth_idx):
            mat[i, j] = _indices_dsi(ci, ci.size, tj, tj.size)
    winner_of = [None] * n_c
    for j in range(n_l):
        if n_c == 0:
            break
        i = int(np.argmax(mat[:, j]))
        if mat[i, j] >= 0.6:
            prev = winner_of[i]
            if prev is None or mat[i, j] > mat[i, prev]:
                winner_of[i] = j
    out = []
    for i in range(n_c):
        best = float(mat[i].max()) if n_l else 0.0
        if winner_of[i] is not None:
            out.append(CandidateLabel(1, winner_of[i], best))
        elif best < 0.2:
            out.append(CandidateLabel(-1, None, best))
        else:
            out.append(CandidateLabel(0, None, best))
    return out


# ---------------------------------------------------------------------------
# decision tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Binary CART stored as parallel node arrays.

    ``feature[i] < 0`` marks a leaf; internal nodes route samples with
    x[feature] < threshold to ``left``. ``value`` is the weighted
    positive-class fraction of the node's training samples.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"expected (n, {self.n_features}) inputs, got {x.shape}")
        out = np.empty(len(x))
        stack = [(0, np.arange(len(x)))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[idx] = self.value[node]
                continue
            go = x[idx, f] < self.threshold[node]
            stack.append((int(self.left[node]), idx[go]))
            stack.append((int(self.right[node]), idx[~go]))
        return out

    def predict_class(self, x: np.ndarray) -> np.ndarray:
        """Class votes in {-1, +1}; probability ties go positive."""
        return np.where(self.predict_proba(x) >= 0.5, 1.0, -1.0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_features=int(d["n_features"]),
        )


def _node_value(w: np.ndarray, wp: np.ndarray) -> float:
    wt = w.sum()
    return float(wp.sum() / wt) if wt > 0 else 0.5


def _weighted_gini(wt, wpt):
    # total-weight-scaled Gini impurity: w * (1 - p^2 - q^2)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = wt - (wpt ** 2 + (wt - wpt) ** 2) / wt
    return np.where(wt > 0, g, 0.0)


def _best_split(x, y, w, wp, idx, feat_ids):
    """Lowest-impurity (feature, threshold, gain) for one node.

    Thresholds are midpoints between consecutive distinct values and
    samples with x < threshold go left. Ties resolve to the lowest
    feature index, then the lowest threshold.
    """
    wn = w[idx]
    wpn = wp[idx]
    wt = wn.sum()
    wpt = wpn.sum()
    parent = float(_weighted_gini(np.array(wt), np.array(wpt)))
    best = None
    for f in feat_ids:
        xs = x[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cw = np.cumsum(wn[order])
        cwp = np.cumsum(wpn[order])
        cut = np.flatnonzero(xs[:-1] < xs[1:])
        if cut.size == 0:
            continue
        wl = cw[cut]
        wpl = cwp[cut]
        total = _weighted_gini(wl, wpl) + _weighted_gini(wt - wl, wpt - wpl)
        k = int(np.argmin(total))
        if best is None or total[k] < best[0]:
            thr = 0.5 * (xs[cut[k]] + xs[cut[k] + 1])
            best = (float(total[k]), f, float(thr))
    if best is None:
        return None
    return best[1], best[2], parent - best[0]


def _grow_tree(x, y, w, max_splits, m_try, rng) -> DecisionTree:
    n, nf = x.shape
    wp = np.where(y > 0, w, 0.0)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_node_value(w[idx], wp[idx]))
        return len(feature) - 1

    def splittable(idx) -> bool:
        if idx.size < 2:
            return False
        yn, wn = y[idx], w[idx]
        return bool((wn[yn > 0] > 0).any() and (wn[yn < 0] > 0).any())

    def propose(node_id, idx, counter):
        if not splittable(idx):
            return None
        ids = np.arange(nf) if m_try is None else np.sort(
            rng.choice(nf, size=m_try, replace=False))
        found = _best_split(x, y, w, wp, idx, ids)
        if found is None:
            return None
        f, thr, gain = found
        return (-gain, counter, node_id, idx, f, thr)

    heap = []
    counter = 0
    root_idx = np.arange(n)
    new_node(root_idx)
    entry = propose(0, root_idx, counter)
    if entry is not None:
        heapq.heappush(heap, entry)
    splits = 0
    while heap and splits < max_splits:
        _, _, node_id, idx, f, thr = heapq.heappop(heap)
        go = x[idx, f] < thr
        li, ri = idx[go], idx[~go]
        feature[node_id] = f
        threshold[node_id] = thr
        left[node_id] = new_node(li)
        right[node_id] = new_node(ri)
        splits += 1
        for child_id, child_idx in ((left[node_id], li), (right[node_id], ri)):
            counter += 1
            entry = propose(child_id, child_idx, counter)
            if entry is not None:
                heapq.heappush(heap, entry)
    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_features=nf,
    )


def _as_xy(samples_or_x, y):
    """Accept either a LabeledSample list or an (X, y) pair."""
    if y is None:
        x, yy, groups, schema = samples_to_arrays(samples_or_x)
        return x, yy, groups, schema
    x = np.asarray(samples_or_x, dtype=np.float64)
    yy = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or yy.shape != (len(x),):
        raise ValueError("X must be (n, f) with matching y")
    if not np.isin(yy, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    return x, yy, None, None


def train_tree(samples_or_x, y=None, *, sample_weight=None, max_splits=None,
               m_try=None, seed=None) -> DecisionTree:
    """Greedy weighted-Gini CART.

    Grows best-first (largest impurity decrease first, insertion order
    on ties) until the split budget, pure leaves, or no remaining valid
    split. ``m_try`` restricts each split to a uniform random feature
    subset of that size. Single-class input yields a single leaf.
    """
    x, yy, _, _ = _as_xy(samples_or_x, y)
    n, nf = x.shape
    if sample_weight is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(sample_weight, dtype=np.float64)
        if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()
    if max_splits is None:
        max_splits = n
    if max_splits < 0:
        raise ValueError("max_splits must be non-negative")
    if m_try is not None and not 1 <= m_try <= nf:
        raise ValueError(f"m_try must be in [1, {nf}]")
    rng = np.random.default_rng(seed)
    return _grow_tree(x, yy, w, max_splits, m_try, rng)


# ---------------------------------------------------------------------------
# RUSBoost
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RusBoostModel:
    """Boosted trees trained on balanced under-samples.

    The positive-class probability is the logistic of the alpha-weighted
    vote margin normalized by the total alpha mass, so scores from
    ensembles of different lengths stay comparable.
    """

    trees: tuple
    alphas: np.ndarray
    learning_rate: float
    schema_id: str | None = None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("expected a 2D feature matrix")
        total = float(self.alphas.sum()) if len(self.trees) else 0.0
        if total <= 0:
            return np.full(len(x), 0.5)
        margin = np.zeros(len(x))
        for tree, alpha in zip(self.trees, self.alphas):
            margin += alpha * tree.predict_class(x)
        return 1.0 / (1.0 + np.exp(-margin / total))

    def prefix(self, n_trees: int) -> "RusBoostModel":
        """The same model truncated to its first ``n_trees`` rounds."""
        return RusBoostModel(self.trees[:n_trees], self.alphas[:n_trees],
                             self.learning_rate, self.schema_id)


def train_rusboost(samples_or_x, y=None, *, n_trees=DEFAULT_N_TREES,
                   learning_rate=DEFAULT_LEARNING_RATE, max_splits=None,
                   seed=None, schema_id=None, _trace=None) -> RusBoostModel:
    """AdaBoost with uniform random under-sampling of the majority class.

    Each round draws a 1:1 balanced subsample under the current weights,
    fits a tree on it, and scores the weighted error on the full set;
    rounds with error >= 0.5 are redrawn up to a bounded count before
    training stops early. The tree split budget defaults to the number
    of training samples.
    """
    x, yy, _, inferred = _as_xy(samples_or_x, y)
    schema_id = schema_id if schema_id is not None else inferred
    n = len(x)
    pos = np.flatnonzero(yy > 0)
    neg = np.flatnonzero(yy < 0)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both classes must be present")
    minority, majority = (pos, neg) if pos.size <= neg.size else (neg, pos)
    if max_splits is None:
        max_splits = n
    rng = np.random.default_rng(seed)
    w = np.full(n, 1.0 / n)
    trees, alphas = [], []
    for _ in range(n_trees):
        accepted = None
        for _ in range(_MAX_RESAMPLE):
            sub = np.sort(np.concatenate(
                [minority, rng.choice(majority, size=minority.size,
                                      replace=False)]))
            wsub = w[sub]
            tree = _grow_tree(x[sub], yy[sub], wsub / wsub.sum(),
                              max_splits, None, rng)
            h = tree.predict_class(x)
            eps = float(w[h != yy].sum())
            if eps < 0.5:
                accepted = (tree, h, eps)
                break
        if accepted is None:
            break
        tree, h, eps = accepted
        alpha = learning_rate * 0.5 * math.log(
            (1.0 - eps) / max(eps, _EPS_FLOOR))
        w = w * np.exp(-alpha * yy * h)
        w = w / w.sum()
        trees.append(tree)
        alphas.append(alpha)
        if _trace is not None:
            _trace.append({"subsample": sub, "epsilon": eps, "alpha": alpha})
    return RusBoostModel(tuple(trees), np.asarray(alphas, dtype=np.float64),
                         learning_rate, schema_id)


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RandomForestModel:
    """Bagged trees; probability = fraction of trees voting positive."""

    trees: tuple
    n_tree: int
    m_try: int
    schema_id: str | None = None
    oob_error: float = float("nan")

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("expected a 2D feature matrix")
        votes = np.zeros(len(x))
        for tree in self.trees:
            votes += tree.predict_proba(x) >= 0.5
        return votes / len(self.trees)


def rf_mtry_grid(n_features: int) -> tuple[int, ...]:
    """Four features-per-split settings spanning [0.5 sqrt(NF), 2 sqrt(NF)].

    Values are rounded up, clipped to [1, NF], and deduplicated (the
    grid collapses on very small feature counts).
    """
    root = math.sqrt(n_features)
    vals = np.ceil(np.linspace(0.5 * root, 2.0 * root, 4)).astype(int)
    vals = np.clip(vals, 1, n_features)
    return tuple(int(v) for v in np.unique(vals))


def _grow_forest(x, y, n_tree, m_try, seeds):
    n = len(x)
    uniform = np.full(n, 1.0 / n)
    trees = []
    for t in range(n_tree):
        rng = np.random.default_rng(seeds[t])
        boot = np.sort(rng.integers(0, n, size=n))
        trees.append(_grow_tree(x[boot], y[boot], uniform, n, m_try, rng))
    return trees


def train_rf(samples_or_x, y=None, *, seed=None, n_tree_grid=None,
             m_try_grid=None, schema_id=None) -> RandomForestModel:
    """Bootstrap forest with out-of-bag grid selection.

    For each features-per-split setting a maximal forest is grown once
    and every tree-count grid point is scored from the out-of-bag votes
    of its prefix (samples never out-of-bag are excluded from the MSE).
    The lowest-MSE point wins, ties toward fewer trees then fewer
    features per split, and the final model is refit on all samples.
    """
    x, yy, _, inferred = _as_xy(samples_or_x, y)
    schema_id = schema_id if schema_id is not None else inferred
    n, nf = x.shape
    if (yy > 0).sum() == 0 or (yy < 0).sum() == 0:
        raise ValueError("both classes must be present")
    n_tree_grid = tuple(sorted(n_tree_grid or DEFAULT_RF_NTREE_GRID))
    m_try_grid = tuple(sorted(m_try_grid or rf_mtry_grid(nf)))
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(m_try_grid) + 1)
    max_trees = n_tree_grid[-1]
    uniform = np.full(n, 1.0 / n)
    mse = {}
    for mi, m in enumerate(m_try_grid):
        seeds = children[mi].spawn(max_trees)
        vote_sum = np.zeros(n)
        vote_cnt = np.zeros(n)
        marks = set(n_tree_grid)
        for t in range(max_trees):
            rng = np.random.default_rng(seeds[t])
            boot = np.sort(rng.integers(0, n, size=n))
            tree = _grow_tree(x[boot], yy[boot], uniform, n, m, rng)
            oob = np.setdiff1d(np.arange(n), boot, assume_unique=False)
            if oob.size:
                vote_sum[oob] += tree.predict_proba(x[oob]) >= 0.5
                vote_cnt[oob] += 1
            if t + 1 in marks:
                covered = vote_cnt > 0
                pred = 2.0 * (vote_sum[covered] / vote_cnt[covered]) - 1.0
                mse[(t + 1, m)] = float(((pred - yy[covered]) ** 2).mean())
    best = None
    for nt in n_tree_grid:
        for m in m_try_grid:
            if best is None or mse[(nt, m)] < best[0]:
                best = (mse[(nt, m)], nt, m)
    _, n_best, m_best = best
    final_seeds = children[-1].spawn(n_best)
    trees = _grow_forest(x, yy, n_best, m_best, final_seeds)
    return RandomForestModel(tuple(trees), n_best, m_best, schema_id, best[0])


# ---------------------------------------------------------------------------
# prediction and cross-validation
# ---------------------------------------------------------------------------

def predict(model, features):
    """Positive-class probability for one vector or a batch.

    FeatureVector inputs are checked against the model's schema id;
    plain arrays are taken as-is. Scalars come back for single vectors,
    a vector for batches.
    """
    if isinstance(features, FeatureVector):
        if model.schema_id is not None and features.schema_id != model.schema_id:
            raise ValueError(
                f"schema mismatch: model {model.schema_id}, "
                f"vector {features.schema_id}")
        return float(model.predict_proba(features.values[None, :])[0])
    if isinstance(features, (list, tuple)) and features and \
            isinstance(features[0], FeatureVector):
        return np.array([predict(model, f) for f in features])
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        return float(model.predict_proba(arr[None, :])[0])
    return model.predict_proba(arr)


def group_folds(groups, k: int) -> np.ndarray:
    """Fold index per sample; all samples of a group share a fold.

    Groups are sorted and dealt round-robin, so the assignment is
    deterministic and folds differ in size by at most one group.
    """
    uniq = sorted(set(groups))
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > len(uniq):
        raise ValueError(f"k={k} exceeds the {len(uniq)} available groups")
    fold_of = {g: i % k for i, g in enumerate(uniq)}
    return np.array([fold_of[g] for g in groups], dtype=np.int64)


def mse_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """MSE between predictions mapped to [-1, 1] (2p - 1) and +-1 labels.

    Under this convention a constant chance predictor (p = 0.5) scores
    exactly 1.0.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    yy = np.asarray(labels, dtype=np.float64)
    return float((((2.0 * p - 1.0) - yy) ** 2).mean())


def cross_validate(samples_or_x, y=None, *, groups=None, k=5, trainer=None) -> float:
    """Pooled k-fold MSE with case-level (group) fold assignment.

    ``trainer`` is a callable (X, y) -> model exposing predict_proba.
    Every sample is scored exactly once by the model whose training
    fold excluded it; the loss pools squared errors over all samples.
    """
    x, yy, inferred_groups, _ = _as_xy(samples_or_x, y)
    groups = groups if groups is not None else inferred_groups
    if groups is None:
        raise ValueError("groups are required (or pass LabeledSamples)")
    if trainer is None:
        raise ValueError("trainer callable is required")
    folds = group_folds(groups, k)
    sq = np.empty(len(x))
    for f in range(k):
        test = folds == f
        model = trainer(x[~test], yy[~test])
        p = model.predict_proba(x[test])
        sq[test] = ((2.0 * p - 1.0) - yy[test]) ** 2
    return float(sq.mean())


def rusboost_cv_curve(samples_or_x, y=None, *, groups=None, n_trees_list,
                      k=5, seed=None, **rus_kwargs) -> list[float]:
    """CV loss at several ensemble lengths from one training per fold.

    Trains each fold once at max(n_trees_list) and scores every prefix
    length, which is equivalent to retraining because boosting rounds
    do not look ahead.
    """
    x, yy, inferred_groups, _ = _as_xy(samples_or_x, y)
    groups = groups if groups is not None else inferred_groups
    if groups is None:
        raise ValueError("groups are required (or pass LabeledSamples)")
    n_trees_list = sorted(n_trees_list)
    folds = group_folds(groups, k)
    fold_seeds = np.random.SeedSequence(seed).spawn(k)
    sq = np.empty((len(n_trees_list), len(x)))
    for f in range(k):
        test = folds == f
        model = train_rusboost(x[~test], yy[~test],
                               n_trees=n_trees_list[-1],
                               seed=fold_seeds[f], **rus_kwargs)
        for i, nt in enumerate(n_trees_list):
            p = model.prefix(nt).predict_proba(x[test])
            sq[i, test] = ((2.0 * p - 1.0) - yy[test]) ** 2
    return [float(row.mean()) for row in sq]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_to_dict(model) -> dict:
    if not isinstance(model, (RusBoostModel, RandomForestModel)):
        raise ValueError(f"cannot serialize {type(model).__name__}")
    base = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema_id": model.schema_id,
        "trees": [t.to_dict() for t in model.trees],
    }
    if isinstance(model, RusBoostModel):
        base.update(kind="rusboost", learning_rate=model.learning_rate,
                    alphas=model.alphas.tolist())
    else:
        base.update(kind="random_forest", n_tree=model.n_tree,
                    m_try=model.m_try, oob_error=model.oob_error)
    return base


def model_from_dict(d: dict):
    if d.get("format") != MODEL_FORMAT:
        raise ValueError("not a recognized model file")
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')}")
    trees = tuple(DecisionTree.from_dict(t) for t in d["trees"])
    if d["kind"] == "rusboost":
        return RusBoostModel(trees, np.asarray(d["alphas"], dtype=np.float64),
                             float(d["learning_rate"]), d["schema_id"])
    if d["kind"] == "random_forest":
        return RandomForestModel(trees, int(d["n_tree"]), int(d["m_try"]),
                                 d["schema_id"], float(d["oob_error"]))
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(path, model) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
