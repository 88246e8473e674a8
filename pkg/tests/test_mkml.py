# tests/test_mkml.py

import numpy as np
import pytest
from pydantic import ValidationError
from sklearn.metrics import adjusted_rand_score

from app.errors import DegenerateInputError, InputValidationError
from models.similarity_models import KernelBank, SimilarityMatrix
from services.mkml import (
    cluster_source_embeddings,
    embed,
    gaussian_kernels,
    kmeans_cluster,
    learn_similarity,
    refine_weights,
)
from services.synthetic import synthesize_population


@pytest.fixture(scope="module")
def blobs():
    return synthesize_population(seed=7, n=60, r=8, m=1, n_modes=2, noise_level=0.02)


# ---------- learn_similarity ----------


def test_identical_subjects_have_unit_similarity():
    x = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.9, 0.5, 0.1], [0.4, 0.4, 0.8]])
    s = learn_similarity(x)
    assert s.values[0, 1] == pytest.approx(1.0)


def test_single_kernel_is_plain_gaussian(rng):
    x = rng.uniform(0, 1, size=(6, 3))
    s = learn_similarity(x, KernelBank.uniform(1))
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    sigma_bar = d[np.triu_indices(6, k=1)].mean()
    expected = np.exp(-(d ** 2) / (2.0 * (0.5 * sigma_bar) ** 2))
    np.testing.assert_allclose(s.values, expected, atol=1e-12)
    assert s.kernel_weights == (1.0,)


def test_similarity_is_exactly_symmetric_with_unit_diagonal(rng):
    for _ in range(100):
        n = int(rng.integers(3, 9))
        s = learn_similarity(rng.uniform(0, 1, size=(n, 4)), iterations=2, neighbors=3).values
        assert np.array_equal(s, s.T)
        assert np.all(np.diag(s) == 1.0)
        assert s.min() >= 0.0 and s.max() <= 1.0


def test_blobs_within_exceeds_cross(blobs):
    s = learn_similarity(blobs.source.features).values
    same = blobs.labels[:, None] == blobs.labels[None, :]
    off = ~np.eye(blobs.n, dtype=bool)
    assert s[same & off].mean() - s[~same].mean() >= 0.3


def test_weights_stay_on_simplex():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, f = int(rng.integers(4, 25)), int(rng.integers(1, 11))
        bank = KernelBank.uniform(int(rng.integers(1, 11)))
        kernels = gaussian_kernels(rng.uniform(0, 1, size=(n, f)), bank)
        w = np.asarray(bank.weights)
        for _ in range(5):
            w = refine_weights(kernels, w, neighbors=int(rng.integers(1, n)))
            assert np.all(w >= 0)
            assert w.sum() == pytest.approx(1.0)


def test_identical_rows_are_degenerate():
    with pytest.raises(DegenerateInputError):
        learn_similarity(np.ones((4, 3)))


def test_kernel_bank_validation():
    with pytest.raises(ValidationError):
        KernelBank(bandwidths=(1.0, 0.5), weights=(0.5, 0.5))
    with pytest.raises(ValidationError):
        KernelBank(bandwidths=(0.5, 1.0), weights=(0.7, 0.7))


# ---------- embed ----------


def test_block_diagonal_rows_coincide():
    s = np.zeros((6, 6))
    s[:3, :3] = 1.0
    s[3:, 3:] = 1.0
    z = embed(SimilarityMatrix(values=s), dim=2)
    np.testing.assert_allclose(z[0], z[1], atol=1e-6)
    np.testing.assert_allclose(z[0], z[2], atol=1e-6)
    np.testing.assert_allclose(z[3], z[5], atol=1e-6)
    assert np.linalg.norm(z[0] - z[3]) > 0.5


def test_identity_similarity_selects_basis_columns():
    z = embed(SimilarityMatrix(values=np.eye(4)), dim=2)
    np.testing.assert_allclose(np.abs(z[:2]), np.eye(2), atol=1e-12)
    np.testing.assert_array_equal(z[2:], 0.0)


def test_embed_rejects_dim_not_below_n():
    with pytest.raises(InputValidationError):
        embed(SimilarityMatrix(values=np.eye(3)), dim=3)


# ---------- kmeans ----------


def test_kmeans_recovers_separated_clouds(rng):
    a = rng.normal(0.0, 0.05, size=(10, 2))
    b = rng.normal(5.0, 0.05, size=(10, 2))
    truth = np.repeat([0, 1], 10)
    result = kmeans_cluster(np.vstack([a, b]), 2, seed=0)
    assert adjusted_rand_score(truth, result.labels) == 1.0


def test_kmeans_single_cluster(rng):
    x = rng.uniform(0, 1, size=(7, 3))
    result = kmeans_cluster(x, 1, seed=0)
    assert np.all(result.labels == 0)
    np.testing.assert_allclose(result.centroids[0], x.mean(axis=0))


def test_kmeans_duplicates_share_label(rng):
    x = rng.uniform(0, 1, size=(8, 2))
    x = np.vstack([x, x[:3]])
    labels = kmeans_cluster(x, 3, seed=1).labels
    np.testing.assert_array_equal(labels[8:], labels[:3])


def test_kmeans_inertia_non_increasing(rng):
    for _ in range(100):
        x = rng.uniform(0, 1, size=(20, 2))
        history = np.asarray(kmeans_cluster(x, 3, seed=int(rng.integers(1000))).inertia_history)
        assert np.all(np.diff(history) <= 1e-12)


def test_kmeans_too_many_clusters():
    with pytest.raises(InputValidationError):
        kmeans_cluster(np.zeros((2, 2)), 3, seed=0)


# ---------- cluster_source_embeddings ----------


def test_cluster_source_embeddings_recovers_modes(blobs):
    result = cluster_source_embeddings(blobs.source.features, 2, seed=0)
    assert adjusted_rand_score(blobs.labels, result.labels) >= 0.8


def test_n_equals_c_gives_singletons(rng):
    result = cluster_source_embeddings(rng.uniform(0, 1, size=(3, 4)), 3, seed=0)
    np.testing.assert_array_equal(result.labels, [0, 1, 2])


def test_same_seed_same_assignment(blobs):
    a = cluster_source_embeddings(blobs.source.features, 2, seed=4)
    b = cluster_source_embeddings(blobs.source.features, 2, seed=4)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_permutation_equivariance():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, r = int(rng.integers(16, 41)), int(rng.integers(4, 9))
        pop = synthesize_population(seed=seed, n=n, r=r, m=1, n_modes=2, noise_level=0.02)
        perm = rng.permutation(n)
        base = cluster_source_embeddings(pop.source.features, 2, seed=seed).labels
        permuted = cluster_source_embeddings(pop.source.features[perm], 2, seed=seed).labels
        assert adjusted_rand_score(base[perm], permuted) == 1.0
