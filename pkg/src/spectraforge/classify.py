"""Evaluation harness: PCA, a random decision forest, accuracy rating, and the
baseline / augmented / reconstructed+synthetic experiment protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .core import ORIGINAL, Dataset, holdout_per_class, make_rng, merge, spawn_rngs
from .errors import DegenerateError, ShapeError, SpecError

log = logging.getLogger(__name__)

BASELINE = "baseline"
AUGMENTED = "augmented"
RECON_SYNTH = "reconstructed_plus_synthetic"
CONDITIONS = (BASELINE, AUGMENTED, RECON_SYNTH)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, p), orthonormal rows
    explained_variance: np.ndarray  # (k,)
    explained_ratio: np.ndarray  # (rank,), all retained-or-not components
    variance_target: float

    @property
    def k(self) -> int:
        return len(self.components)


def _as_matrix(records) -> np.ndarray:
    if isinstance(records, Dataset):
        return records.stack().reshape(len(records), -1)
    X = np.asarray(records, dtype=np.float64)
    return X.reshape(len(X), -1)


def pca_fit(records, variance_target: float = 0.90) -> PcaModel:
    """Keep the fewest components whose cumulative explained-variance ratio
    reaches ``variance_target``.  Each component is signed so that its
    largest-magnitude coordinate is positive.
    """
    X = _as_matrix(records)
    if len(X) < 2:
        raise SpecError("PCA needs at least 2 records")
    if not 0.0 < variance_target <= 1.0:
        raise SpecError("variance_target must lie in (0, 1]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s * s / (len(X) - 1)
    total = var.sum()
    if not total > 0.0:
        raise DegenerateError("all records are identical")
    rank = int(np.sum(var > var[0] * 1e-12))
    var, vt = var[:rank], vt[:rank]
    ratio = var / total
    cum = np.cumsum(ratio)
    k = min(int(np.searchsorted(cum, variance_target - 1e-12)) + 1, rank)
    comps = vt[:k].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), pivot])[:, None]
    return PcaModel(mean, comps, var[:k].copy(), ratio, variance_target)


def pca_transform(model: PcaModel, records) -> np.ndarray:
    """Project records onto the retained components.

    A single record (vector or ``m x n`` matrix) gives a vector of length k;
    a Dataset or an ``(N, p)`` matrix gives an ``(N, k)`` array.
    """
    p = model.mean.size
    if isinstance(records, Dataset):
        X, single = records.stack().reshape(len(records), -1), False
    else:
        X = np.asarray(getattr(records, "data", records), dtype=np.float64)
        single = X.ndim == 1 or (X.ndim == 2 and X.shape[1] != p and X.size == p)
        X = X.reshape(1, -1) if single else X
    if X.ndim != 2 or X.shape[1] != p:
        raise ShapeError(f"records do not match the PCA input width {p}")
    Y = (X - model.mean) @ model.components.T
    return Y[0] if single else Y


def pca_inverse(model: PcaModel, Y) -> np.ndarray:
    return model.mean + np.asarray(Y) @ model.components


# ---------------------------------------------------------------------------
# Forest
# ---------------------------------------------------------------------------

@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: str | int | None = "sqrt"
    bootstrap: bool = True
    min_samples_split: int = 2
    max_depth: int | None = None
    seed: int = 0

    def n_features(self, k: int) -> int:
        mf = self.max_features
        if mf is None:
            return k
        if mf == "sqrt":
            return max(1, math.ceil(math.sqrt(k)))
        return max(1, min(int(mf), k))


@dataclass(eq=False)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # predicted class index per node
    counts: np.ndarray  # (nodes, n_classes)

    def predict(self, X) -> np.ndarray:
        return _kernels.predict_tree(self.feature, self.threshold, self.left, self.right,
                                     self.value, X)


@dataclass(eq=False)
class ForestModel:
    trees: list[Tree]
    labels: tuple
    n_features: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def votes(self, X) -> np.ndarray:
        X = _features_2d(X, self.n_features)
        votes = np.zeros((len(X), len(self.labels)), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict(X)), 1)
        return votes

    def predict_index(self, X) -> np.ndarray:
        # argmax returns the first maximum: ties go to the earliest canonical label
        return np.argmax(self.votes(X), axis=1)

    def predict(self, X) -> list:
        return [self.labels[i] for i in self.predict_index(X)]


def _features_2d(X, width) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != width:
        raise ShapeError(f"expected {width} features, got shape {X.shape}")
    return X


def grow_tree(X, y, n_classes, cfg: ForestConfig, rng) -> Tree:
    """Grow one CART tree with Gini splits on a random feature subset per node."""
    n, k = X.shape
    max_features = cfg.n_features(k)
    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(idx):
        c = np.bincount(y[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(int(np.argmax(c)))
        counts.append(c)
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (np.count_nonzero(c) <= 1 or len(idx) < cfg.min_samples_split
                or (cfg.max_depth is not None and depth >= cfg.max_depth)):
            continue
        perm = rng.permutation(k)
        Xn = np.ascontiguousarray(X[idx])
        f, t, _ = _kernels.best_split(Xn, y[idx], n_classes, perm, max_features)
        if f < 0:
            continue
        go_left = Xn[:, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, t
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.int64), np.array(counts, dtype=np.int64))


def forest_train(features, labels, cfg: ForestConfig | None = None,
                 label_order=None) -> ForestModel:
    """Bootstrap-aggregated Gini trees; deterministic under ``cfg.seed``.

    ``label_order`` fixes the canonical label order used for tie-breaking;
    it defaults to the sorted distinct labels.
    """
    cfg = cfg or ForestConfig()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise SpecError("forest_train needs a non-empty 2D feature matrix")
    labels = list(labels)
    if len(labels) != len(X):
        raise SpecError("features and labels differ in length")
    order = tuple(label_order) if label_order else tuple(sorted(set(labels)))
    index = {lab: i for i, lab in enumerate(order)}
    y = np.array([index[lab] for lab in labels], dtype=np.int64)
    rngs = spawn_rngs(make_rng(cfg.seed), cfg.n_trees)
    trees = []
    for rng in rngs:
        if cfg.bootstrap:
            sample = rng.integers(0, len(X), len(X))
        else:
            sample = np.arange(len(X))
        trees.append(grow_tree(X[sample], y[sample], len(order), cfg, rng))
    return ForestModel(trees, order, X.shape[1], cfg)


def forest_predict(model: ForestModel, feature_vector):
    """Majority vote; returns one label for a vector, a list for a matrix."""
    preds = model.predict(feature_vector)
    return preds[0] if np.ndim(feature_vector) == 1 else preds


def accuracy_rating(preds, truth) -> float:
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise SpecError("prediction and truth lengths differ")
    if not preds:
        raise SpecError("accuracy of an empty set")
    return sum(p == t for p, t in zip(preds, truth)) / len(preds)


# ---------------------------------------------------------------------------
# Experiment protocol
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    condition: str
    seeds: list
    ar: list
    audit: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.ar))

    @property
    def std_defined(self) -> bool:
        return len(self.ar) > 1

    @property
    def std(self) -> float:
        return float(np.std(self.ar, ddof=1)) if self.std_defined else 0.0

    def to_json(self) -> dict:
        return {"condition": self.condition, "seeds": list(self.seeds),
                "ar": [float(a) for a in self.ar], "mean": self.mean, "std": self.std,
                "std_defined": self.std_defined,
                "runs": [{k: v for k, v in a.items() if not k.endswith("_ids")}
                         for a in self.audit]}


SynthSource = Dataset | Callable[[Dataset, int], Dataset] | None


def _resolve(source, train_orig: Dataset, seed: int) -> Dataset | None:
    if source is None or isinstance(source, Dataset):
        return source
    return source(train_orig, seed)


def _evaluate(train: Dataset, val: Dataset, labels, variance_target, forest_cfg):
    pca = pca_fit(train, variance_target)
    ftr = pca_transform(pca, train.stack().reshape(len(train), -1))
    fval = pca_transform(pca, val.stack().reshape(len(val), -1))
    forest = forest_train(ftr, [r.label for r in train.records], forest_cfg, labels)
    preds = forest.predict(fval)
    return accuracy_rating(preds, [r.label for r in val.records]), pca.k


def run_experiment(original: Dataset, synthetic: SynthSource = None,
                   reconstructed: SynthSource = None, runs: int = 5, holdout_k: int = 5,
                   seeds=None, variance_target: float = 0.90,
                   forest_cfg: ForestConfig | None = None) -> list[ExperimentReport]:
    """Repeated hold-out evaluation of the three training conditions.

    Per seed, ``holdout_k`` original records per class form the validation
    set.  ``baseline`` trains on the remaining originals, ``augmented`` adds
    the synthetic records, ``reconstructed_plus_synthetic`` swaps the
    originals for their reconstructions (matched by ``source_id``) and adds
    the synthetic records.  PCA and forest are fitted per condition on its
    training set only.

    ``synthetic`` / ``reconstructed`` may be fixed datasets or callables
    ``f(train_originals, seed) -> Dataset``; callables never see validation
    records, which keeps generated data free of validation information.
    """
    seeds = list(seeds) if seeds is not None else list(range(1, runs + 1))
    if len(seeds) != runs:
        raise SpecError(f"{runs} runs need {runs} seeds, got {len(seeds)}")
    originals = original.subset(r for r in original.records if r.provenance == ORIGINAL)
    if len(originals) != len(original):
        raise SpecError("the original dataset must contain only original-provenance records")
    labels = originals.labels
    forest_cfg = forest_cfg or ForestConfig()
    reports = {c: ExperimentReport(c, [], []) for c in CONDITIONS}
    for seed in seeds:
        split_rng, forest_rng = spawn_rngs(make_rng(seed), 2)
        train_orig, val = holdout_per_class(originals, holdout_k, split_rng)
        if len(val) == 0:
            raise SpecError("validation set is empty; holdout_k must be positive")
        fcfg = ForestConfig(forest_cfg.n_trees, forest_cfg.max_features, forest_cfg.bootstrap,
                            forest_cfg.min_samples_split, forest_cfg.max_depth,
                            int(forest_rng.integers(2**63 - 1)))
        syn = _resolve(synthetic, train_orig, seed)
        rec = _resolve(reconstructed, train_orig, seed)
        conditions = {BASELINE: train_orig}
        if syn is not None:
            conditions[AUGMENTED] = merge(train_orig, syn)
        if syn is not None and rec is not None:
            train_ids = set(train_orig.ids)
            rec_train = rec.subset(r for r in rec.records if r.source_id in train_ids)
            conditions[RECON_SYNTH] = merge(rec_train, syn)
        val_ids = set(val.ids)
        for cond, train in conditions.items():
            _check_no_leak(train, val, val_ids)
            ar, k = _evaluate(train, val, labels, variance_target, fcfg)
            reports[cond].seeds.append(seed)
            reports[cond].ar.append(ar)
            reports[cond].audit.append({"seed": seed, "ar": ar, "pca_k": k,
                                        "n_train": len(train), "n_val": len(val),
                                        "train_ids": list(train.ids), "val_ids": list(val.ids)})
            log.info("seed %s %-28s AR=%.4f (k=%d, n_train=%d)", seed, cond, ar, k, len(train))
    return [r for r in reports.values() if r.ar]


def _check_no_leak(train: Dataset, val: Dataset, val_ids: set):
    overlap = val_ids.intersection(train.ids)
    overlap |= val_ids.intersection(r.source_id for r in train.records if r.source_id)
    if overlap:
        raise AssertionError(f"validation records leaked into training: {sorted(overlap)[:5]}")
    if any(r.provenance != ORIGINAL for r in val.records):
        raise AssertionError("validation contains non-original records")
