import numpy as np
import pytest

from spectraforge import core, seqae, synth
from spectraforge.errors import StatsError
from spectraforge.seqae import LatentMatrix


def lat(E, label="A", sid="x"):
    return LatentMatrix(np.asarray(E, float), sid, label)


def naive_stats(group):
    """Two-pass loop mean / unbiased covariance."""
    vecs = [list(np.asarray(g.E).reshape(-1)) for g in group]
    n, p = len(vecs), len(vecs[0])
    mean = [sum(v[j] for v in vecs) / n for j in range(p)]
    cov = [[sum((v[a] - mean[a]) * (v[b] - mean[b]) for v in vecs) / (n - 1)
            for b in range(p)] for a in range(p)]
    return np.array(mean), np.array(cov)


def random_spd(p, rng):
    A = rng.normal(size=(p, p))
    return A @ A.T / p + 0.1 * np.eye(p)


def test_group_by_label():
    g = synth.group_by_label([lat([[0]], "A"), lat([[1]], "A"), lat([[2]], "B")])
    assert {k: len(v) for k, v in g.items()} == {"A": 2, "B": 1}
    assert synth.group_by_label([]) == {}


def test_fit_stats_two_scalars():
    s = synth.fit_stats([lat([[0.0]]), lat([[2.0]])])
    assert s.mean.tolist() == [1.0]
    assert s.cov[0, 0] == pytest.approx(2.0 + s.ridge, abs=1e-15)
    assert s.ridge > 0


def test_fit_stats_identical_matrices_is_pure_ridge():
    E = np.arange(4.0).reshape(2, 2)
    s = synth.fit_stats([lat(E), lat(E), lat(E)])
    np.testing.assert_array_equal(s.cov, s.ridge * np.eye(4))
    np.testing.assert_array_equal(s.mean, E.reshape(-1))


def test_fit_stats_matches_loop_oracle():
    rng = np.random.default_rng(0)
    group = [lat(rng.normal(size=(3, 3))) for _ in range(7)]
    s = synth.fit_stats(group, ridge=0.0 + 1e-12)
    mean, cov = naive_stats(group)
    np.testing.assert_allclose(s.mean, mean, atol=1e-12)
    np.testing.assert_allclose(s.cov - s.ridge * np.eye(9), cov, atol=1e-12)


def test_fit_stats_symmetric_and_factorable():
    rng = np.random.default_rng(1)
    group = [lat(rng.normal(size=(4, 4))) for _ in range(5)]  # rank 4 << 16
    s = synth.fit_stats(group)
    np.testing.assert_allclose(s.cov, s.cov.T, atol=1e-12)
    L = synth.cholesky_factor(s)
    assert np.linalg.eigvalsh(s.cov).min() >= 0
    assert np.linalg.norm(L @ L.T - s.cov) / np.linalg.norm(s.cov) < 1e-8


def test_fit_stats_needs_two():
    with pytest.raises(StatsError):
        synth.fit_stats([lat([[1.0]])])


def test_shrinkage_option_blends_to_diagonal():
    rng = np.random.default_rng(2)
    group = [lat(rng.normal(size=(2, 2))) for _ in range(6)]
    full = synth.fit_stats(group, ridge=1e-9)
    diag = synth.fit_stats(group, ridge=1e-9, shrinkage=1.0)
    off = ~np.eye(4, dtype=bool)
    assert np.all(diag.cov[off] == 0.0)
    np.testing.assert_allclose(np.diag(diag.cov), np.diag(full.cov))


def test_zero_variance_samples_equal_mean():
    E = np.array([[1.0, -2.0], [0.5, 3.0]])
    s = synth.fit_stats([lat(E), lat(E)], ridge=1e-300)
    for draw in synth.sample_latent(s, 5, 0):
        np.testing.assert_allclose(draw.E, E, atol=1e-140)
        assert draw.provenance == seqae.SAMPLED and draw.label == "A"


def test_sample_reproducible():
    rng = np.random.default_rng(3)
    s = synth.fit_stats([lat(rng.normal(size=(2, 2))) for _ in range(4)])
    a = [d.E for d in synth.sample_latent(s, 3, 11)]
    b = [d.E for d in synth.sample_latent(s, 3, 11)]
    np.testing.assert_array_equal(np.stack(a), np.stack(b))


def test_scalar_moments():
    s = synth.LabelStats("A", np.zeros(1), np.ones((1, 1)), 2, 0.0)
    x = np.array([d.E[0, 0] for d in synth.sample_latent(s, 100_000, 5)])
    assert abs(x.mean()) < 0.02
    assert 0.97 <= x.var(ddof=1) <= 1.03


def test_general_covariance_monte_carlo():
    rng = np.random.default_rng(4)
    cov = random_spd(9, rng)
    mean = rng.normal(size=9)
    s = synth.LabelStats("A", mean, cov, 10, 0.0)
    X = np.stack([d.E.reshape(-1) for d in synth.sample_latent(s, 50_000, 6)])
    emp = np.cov(X, rowvar=False)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.10


def test_synthesize_counts_and_provenance():
    b = seqae.identity_bundle(2)
    rng = np.random.default_rng(0)
    lats = [lat(rng.random((2, 2)), "A", f"a{i}") for i in range(5)]
    lats += [lat(rng.random((2, 2)), "B", f"b{i}") for i in range(7)]
    ds = synth.synthesize(lats, b, 1.0, rng=3, labels=("A", "B"))
    assert sum(r.label == "A" for r in ds) == 5 and sum(r.label == "B" for r in ds) == 7
    assert all(r.provenance == core.SYNTHETIC and r.shape == (2, 2) for r in ds)
    assert len(synth.synthesize(lats, b, 0.0, rng=3)) == 0
    assert sum(r.label == "A" for r in synth.synthesize(lats, b, 0.5, rng=3)) == 3


def test_synthesize_small_group_names_label():
    b = seqae.identity_bundle(1)
    with pytest.raises(StatsError, match="'B'"):
        synth.synthesize([lat([[0]], "A"), lat([[1]], "A"), lat([[0]], "B")], b, 1.0, rng=0)


def test_synthesize_deterministic():
    b = seqae.identity_bundle(2)
    rng = np.random.default_rng(1)
    lats = [lat(rng.random((2, 2)), "A", f"a{i}") for i in range(4)]
    a = synth.synthesize(lats, b, 1.0, rng=8).stack()
    c = synth.synthesize(lats, b, 1.0, rng=8).stack()
    np.testing.assert_array_equal(a, c)


def test_stats_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    s = synth.fit_stats([lat(rng.normal(size=(2, 2))) for _ in range(3)])
    path = synth.save_stats(s, tmp_path)
    back = synth.load_stats(path)
    assert back.label == "A" and back.n_samples == 3 and back.ridge == s.ridge
    np.testing.assert_array_equal(back.cov, s.cov)
    np.testing.assert_array_equal(back.mean, s.mean)
