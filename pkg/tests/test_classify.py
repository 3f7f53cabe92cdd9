import numpy as np
import pytest

from spectraforge import _kernels, classify, core
from spectraforge.classify import ForestConfig
from spectraforge.core import Dataset, Spectrum2D
from spectraforge.errors import DegenerateError, ShapeError, SpecError


def eig_oracle(X):
    """Explained variances and components via the covariance eigendecomposition."""
    C = np.cov(X, rowvar=False, ddof=1)
    w, V = np.linalg.eigh(C)
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def k_oracle(w, target):
    w = np.clip(w, 0, None)
    cum = np.cumsum(w) / w.sum()
    return int(np.argmax(cum >= target - 1e-12)) + 1


# -- PCA ---------------------------------------------------------------------

def test_rank_one_line():
    t = np.linspace(-1, 1, 9)[:, None]
    X = t * np.array([[1.0, 2.0, -2.0]]) + np.array([3.0, 0.0, 1.0])
    m = classify.pca_fit(X)
    assert m.k == 1
    assert m.explained_ratio[0] == pytest.approx(1.0, abs=1e-12)


def test_random_10x4_matches_eigen_oracle():
    X = np.random.default_rng(0).normal(size=(10, 4))
    m = classify.pca_fit(X, 1.0)
    w, V = eig_oracle(X)
    np.testing.assert_allclose(m.explained_variance, w, atol=1e-8)
    for i in range(m.k):
        assert abs(abs(m.components[i] @ V[:, i]) - 1.0) < 1e-8


@pytest.mark.parametrize("seed", range(25))
def test_k_selection_and_projectors(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(3, 51), rng.integers(2, 31)
    X = rng.normal(size=(n, p)) @ rng.normal(size=(p, p))
    m = classify.pca_fit(X, 0.9)
    w, V = eig_oracle(X)
    assert m.k == k_oracle(w, 0.9)
    np.testing.assert_allclose(m.explained_variance, w[:m.k], atol=1e-8 * max(1.0, w[0]))
    P = m.components.T @ m.components
    Q = V[:, :m.k] @ V[:, :m.k].T
    assert np.abs(P - Q).max() < 1e-6


def test_components_orthonormal_and_signed():
    X = np.random.default_rng(1).normal(size=(20, 8))
    m = classify.pca_fit(X, 0.99)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(m.k), atol=1e-8)
    assert np.all(np.diff(m.explained_variance) <= 0)
    for c in m.components:
        assert c[np.argmax(np.abs(c))] > 0
    assert np.cumsum(m.explained_ratio)[-1] == pytest.approx(1.0, abs=1e-12)


def test_transform_mean_is_zero_and_full_rank_is_lossless():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(6, 3)) @ rng.normal(size=(3, 10))  # rank 3
    m = classify.pca_fit(X, 1.0)
    np.testing.assert_allclose(classify.pca_transform(m, m.mean), 0.0, atol=1e-12)
    Y = classify.pca_transform(m, X)
    np.testing.assert_allclose(classify.pca_inverse(m, Y), X, atol=1e-8)
    d_orig = np.linalg.norm(X[:, None] - X[None], axis=-1)
    d_proj = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    np.testing.assert_allclose(d_proj, d_orig, atol=1e-8)


def test_pca_errors():
    with pytest.raises(DegenerateError):
        classify.pca_fit(np.ones((4, 3)))
    with pytest.raises(SpecError):
        classify.pca_fit(np.ones((1, 3)))
    m = classify.pca_fit(np.random.default_rng(0).normal(size=(5, 3)))
    with pytest.raises(ShapeError):
        classify.pca_transform(m, np.ones((2, 4)))


def test_pca_accepts_dataset_records():
    rng = np.random.default_rng(5)
    ds = Dataset(tuple(Spectrum2D(f"r{i}", rng.random((3, 4)), label="A") for i in range(6)))
    m = classify.pca_fit(ds)
    assert classify.pca_transform(m, ds).shape == (6, m.k)
    assert classify.pca_transform(m, ds.records[0]).shape == (m.k,)


# -- forest ------------------------------------------------------------------

def blobs(seed, n=40):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.1, (n, 3))
    b = rng.normal(0.0, 0.1, (n, 3)) + np.array([10.0, 0, 0]) / 1.0
    return np.vstack([a, b]), ["a"] * n + ["b"] * n


def test_single_class_predicts_it():
    X = np.random.default_rng(0).normal(size=(8, 3))
    f = classify.forest_train(X, ["only"] * 8, ForestConfig(n_trees=5))
    assert set(f.predict(np.random.default_rng(1).normal(size=(10, 3)))) == {"only"}


def test_separable_blobs_training_accuracy():
    X, y = blobs(0)
    f = classify.forest_train(X, y, ForestConfig(n_trees=20, seed=1))
    assert classify.accuracy_rating(f.predict(X), y) == 1.0


def test_same_seed_same_forest():
    X, y = blobs(1)
    X = X + np.random.default_rng(2).normal(0, 3, X.shape)
    probe = np.random.default_rng(3).normal(0, 5, (50, 3))
    a = classify.forest_train(X, y, ForestConfig(n_trees=15, seed=4)).predict(probe)
    b = classify.forest_train(X, y, ForestConfig(n_trees=15, seed=4)).predict(probe)
    assert a == b


def test_single_tree_no_bootstrap_equals_its_tree():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 4))
    y = list(rng.choice(["p", "q", "r"], 30))
    f = classify.forest_train(X, y, ForestConfig(n_trees=1, bootstrap=False, seed=2))
    probe = rng.normal(size=(40, 4))
    tree_pred = [f.labels[i] for i in f.trees[0].predict(probe)]
    assert f.predict(probe) == tree_pred
    # grown to purity without bootstrap: reproduces training labels
    assert f.predict(X) == y


def test_tie_goes_to_first_canonical_label():
    def leaf_tree(cls):
        return classify.Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]),
                             np.array([cls]), np.zeros((1, 2), dtype=np.int64))

    f = classify.ForestModel([leaf_tree(1), leaf_tree(0)], ("first", "second"), 2)
    assert classify.forest_predict(f, np.zeros(2)) == "first"
    f_all = classify.ForestModel([leaf_tree(1), leaf_tree(1)], ("first", "second"), 2)
    assert classify.forest_predict(f_all, np.zeros(2)) == "second"


def test_vote_histogram_matches_per_tree_sum():
    X, y = blobs(6)
    X = X + np.random.default_rng(7).normal(0, 4, X.shape)
    f = classify.forest_train(X, y, ForestConfig(n_trees=11, seed=8))
    probe = np.random.default_rng(9).normal(0, 5, (25, 3))
    hist = np.zeros((25, 2), dtype=int)
    for t in f.trees:
        for i, x in enumerate(probe):
            node = 0
            while t.feature[node] >= 0:
                node = t.left[node] if x[t.feature[node]] <= t.threshold[node] else t.right[node]
            hist[i, t.value[node]] += 1
    np.testing.assert_array_equal(f.votes(probe), hist)


def test_leaves_nonempty():
    X, y = blobs(3)
    f = classify.forest_train(X, y, ForestConfig(n_trees=5, seed=0))
    for t in f.trees:
        leaves = t.feature < 0
        assert np.all(t.counts[leaves].sum(axis=1) > 0)


def test_forest_errors():
    with pytest.raises(SpecError):
        classify.forest_train(np.empty((0, 3)), [])
    f = classify.forest_train(*blobs(0), ForestConfig(n_trees=2))
    with pytest.raises(ShapeError):
        f.predict(np.zeros((1, 5)))


def test_max_features_sqrt():
    assert ForestConfig().n_features(22) == 5
    assert ForestConfig().n_features(1) == 1
    assert ForestConfig(max_features=None).n_features(7) == 7


# -- kernels: numba and numpy paths agree ------------------------------------

@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("seed", range(10))
def test_best_split_paths_agree(seed):
    rng = np.random.default_rng(seed)
    n, k, c = rng.integers(2, 40), rng.integers(1, 8), rng.integers(2, 5)
    X = np.round(rng.normal(size=(n, k)), 1)  # rounding creates ties
    y = rng.integers(0, c, n)
    feats = rng.permutation(k)
    mf = int(rng.integers(1, k + 1))
    a = _kernels.best_split(X, y, c, feats, mf, use_numba=True)
    b = _kernels.best_split(X, y, c, feats, mf, use_numba=False)
    assert a == b


def test_best_split_brute_force():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(15, 3))
    y = rng.integers(0, 3, 15)

    def gini_sum(labels):
        if len(labels) == 0:
            return 0.0
        p = np.bincount(labels, minlength=3) / len(labels)
        return len(labels) * (1 - np.sum(p * p))

    best = min((gini_sum(y[X[:, f] <= t]) + gini_sum(y[X[:, f] > t]), f)
               for f in range(3) for t in X[:, f])
    f, t, s = _kernels.best_split(X, y, 3, np.arange(3), 3, use_numba=False)
    assert s == pytest.approx(best[0], abs=1e-12)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_predict_paths_agree():
    X, y = blobs(4)
    X = X + np.random.default_rng(5).normal(0, 4, X.shape)
    f = classify.forest_train(X, y, ForestConfig(n_trees=3, seed=1))
    probe = np.random.default_rng(6).normal(0, 6, (30, 3))
    t = f.trees[0]
    args = (t.feature, t.threshold, t.left, t.right, t.value, probe)
    np.testing.assert_array_equal(_kernels.predict_tree(*args, use_numba=True),
                                  _kernels.predict_tree(*args, use_numba=False))


# -- accuracy & experiment ---------------------------------------------------

def test_accuracy_rating():
    assert classify.accuracy_rating("abcd", "abcd") == 1.0
    assert classify.accuracy_rating("abcx", "abcd") == 0.75
    with pytest.raises(SpecError):
        classify.accuracy_rating("ab", "abc")


def test_accuracy_matches_confusion_trace():
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 4, 50)
    preds = np.where(rng.random(50) < 0.6, truth, rng.integers(0, 4, 50))
    cm = np.zeros((4, 4))
    np.add.at(cm, (truth, preds), 1)
    assert classify.accuracy_rating(preds, truth) == pytest.approx(np.trace(cm) / cm.sum())


def toy_dataset(seed=0, per_class=8, labels=("A", "B", "C")):
    rng = np.random.default_rng(seed)
    recs = []
    for li, lab in enumerate(labels):
        for i in range(per_class):
            x = rng.random((4, 5)) * 0.3
            x[li, :] += 1.0
            recs.append(Spectrum2D(f"{lab}_{i}", x, label=lab, scale_state=core.LOG_MINMAX))
    return Dataset(tuple(recs), labels)


def fake_synth(train, seed):
    rng = np.random.default_rng(seed)
    recs = [Spectrum2D(f"syn_{r.id}", r.data + rng.normal(0, 0.01, r.shape), label=r.label,
                       scale_state=core.LOG_MINMAX, provenance=core.SYNTHETIC)
            for r in train]
    return Dataset(tuple(recs), train.labels)


def test_run_experiment_conditions_and_no_leak():
    ds = toy_dataset()
    rec = Dataset(tuple(Spectrum2D(r.id + "__rec", r.data, label=r.label, scale_state=r.scale_state,
                                   provenance=core.RECONSTRUCTED, source_id=r.id) for r in ds),
                  ds.labels)
    reps = classify.run_experiment(ds, fake_synth, rec, runs=3, holdout_k=2, seeds=[1, 2, 3],
                                   forest_cfg=ForestConfig(n_trees=10))
    assert [r.condition for r in reps] == list(classify.CONDITIONS)
    for r in reps:
        assert len(r.ar) == 3 and all(0 <= a <= 1 for a in r.ar)
        for run in r.audit:
            assert set(run["val_ids"]).isdisjoint(run["train_ids"])
            assert run["n_val"] == 6
    recon = reps[2].audit[0]
    assert all(i.endswith("__rec") or i.startswith("syn_") for i in recon["train_ids"])


def test_run_experiment_single_run_flags_std():
    reps = classify.run_experiment(toy_dataset(), runs=1, holdout_k=1, seeds=[4],
                                   forest_cfg=ForestConfig(n_trees=5))
    assert len(reps) == 1
    assert reps[0].std == 0.0 and reps[0].std_defined is False
    assert reps[0].to_json()["std_defined"] is False


def test_run_experiment_rejects_generated_records_as_original():
    ds = core.merge(toy_dataset(), fake_synth(toy_dataset(), 0))
    with pytest.raises(SpecError):
        classify.run_experiment(ds, runs=1, holdout_k=1, seeds=[0])


def test_report_std_uses_sample_divisor():
    r = classify.ExperimentReport("baseline", [1, 2, 3], [0.7, 0.8, 0.9])
    assert r.std == pytest.approx(0.1)
    assert r.mean == pytest.approx(0.8)


def test_env_flag_disables_numba():
    import os
    import subprocess
    import sys

    code = "from spectraforge import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, SPECTRAFORGE_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "False"


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_forest_identical_on_both_paths(monkeypatch):
    rng = np.random.default_rng(12)
    X = rng.normal(size=(60, 7))
    y = ["a" if v > 0 else "b" for v in X[:, 0] + 0.5 * rng.normal(size=60)]
    cfg = ForestConfig(n_trees=15, seed=4)
    preds = []
    for flag in (True, False):
        monkeypatch.setattr(_kernels, "USE_NUMBA", flag)
        f = classify.forest_train(X, y, cfg)
        preds.append(f.votes(X))
    np.testing.assert_array_equal(preds[0], preds[1])
