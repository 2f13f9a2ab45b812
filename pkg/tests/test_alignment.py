import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_ate.alignment import (
    FactorPermutation,
    apply_permutation,
    consensus_align,
    cosine_similarity_matrix,
    hungarian_align,
)
from latent_ate.alignment import _best_assignment
from latent_ate.errors import DataValidationError
from latent_ate.factorization import FactorModel


def exhaustive(sim):
    """Brute force over all permutations; lexicographic order breaks ties."""
    k = sim.shape[0]
    best, best_total = None, -np.inf
    for perm in itertools.permutations(range(k)):
        total = sum(sim[j, perm[j]] for j in range(k))
        if total > best_total + 1e-12:
            best, best_total = perm, total
    return best, best_total


def test_cosine_orthogonal_identity():
    a = np.eye(4)[:, :3]
    np.testing.assert_array_equal(cosine_similarity_matrix(a, a), np.eye(3))


def test_cosine_hand_value():
    a = np.array([[1.0], [0.0]])
    b = np.array([[1.0], [1.0]]) / np.sqrt(2)
    assert cosine_similarity_matrix(a, b)[0, 0] == pytest.approx(0.7071067811865476, rel=1e-15)


def test_cosine_scale_invariant():
    rng = np.random.default_rng(0)
    a, b = rng.random((6, 3)), rng.random((6, 4))
    scaled = b * np.array([0.1, 5.0, 2.0, 40.0])
    np.testing.assert_allclose(cosine_similarity_matrix(a, scaled), cosine_similarity_matrix(a, b), rtol=1e-13)


def test_cosine_errors():
    with pytest.raises(DataValidationError, match="all zeros"):
        cosine_similarity_matrix(np.zeros((3, 1)), np.ones((3, 1)))
    with pytest.raises(DataValidationError, match="row count mismatch"):
        cosine_similarity_matrix(np.ones((3, 1)), np.ones((4, 1)))


def test_align_identity_and_reversal():
    rng = np.random.default_rng(1)
    ref = rng.dirichlet(np.full(10, 0.3), size=4).T
    p = hungarian_align(ref, ref)
    assert p.mapping == (0, 1, 2, 3)
    assert p.total_similarity == pytest.approx(4.0, abs=1e-12)
    assert hungarian_align(ref[:, ::-1], ref).mapping == (3, 2, 1, 0)


def test_align_k_mismatch():
    with pytest.raises(DataValidationError, match="factor count mismatch"):
        hungarian_align(np.ones((3, 2)), np.ones((3, 3)))


def test_align_random_k3_matches_exhaustive():
    rng = np.random.default_rng(2)
    for _ in range(20):
        est, ref = rng.random((8, 3)), rng.random((8, 3))
        sim = cosine_similarity_matrix(ref, est)
        assert hungarian_align(est, ref).mapping == exhaustive(sim)[0]


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_best_assignment_property(k, seed):
    sim = np.random.default_rng(seed).uniform(-1, 1, size=(k, k))
    mapping, total = exhaustive(sim)
    p = _best_assignment(sim)
    assert p.mapping == mapping
    assert p.total_similarity == pytest.approx(total, abs=1e-12)


def test_ties_resolve_to_smallest_mapping():
    sim = np.ones((3, 3))
    assert _best_assignment(sim).mapping == (0, 1, 2)
    sim = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert _best_assignment(sim).mapping == (0, 1)


def test_alignment_scale_invariant():
    rng = np.random.default_rng(3)
    est, ref = rng.random((9, 4)), rng.random((9, 4))
    assert hungarian_align(est * [3.0, 0.2, 9.0, 1.5], ref).mapping == hungarian_align(est, ref).mapping


def test_permutation_validation_and_inverse():
    with pytest.raises(DataValidationError):
        FactorPermutation((0, 0), 1.0)
    p = FactorPermutation((2, 0, 1), 0.0)
    inv = p.inverse
    assert [p.mapping[i] for i in inv.mapping] == [0, 1, 2]
    assert FactorPermutation.identity(3).mapping == (0, 1, 2)


def test_apply_permutation_group_properties():
    rng = np.random.default_rng(4)
    m = FactorModel(rng.random((5, 3)), rng.random((3, 6)))
    same = apply_permutation(m, FactorPermutation.identity(3))
    np.testing.assert_array_equal(same.lambda_, m.lambda_)
    p = FactorPermutation((1, 2, 0), 0.0)
    moved = apply_permutation(m, p)
    np.testing.assert_allclose(moved.product(), m.product(), rtol=1e-12)
    back = apply_permutation(moved, p.inverse)
    np.testing.assert_array_equal(back.lambda_, m.lambda_)
    np.testing.assert_array_equal(back.contributions, m.contributions)
    with pytest.raises(DataValidationError):
        apply_permutation(m, FactorPermutation.identity(2))


def test_consensus_single_replicate():
    rng = np.random.default_rng(5)
    lam = rng.dirichlet(np.ones(6), size=3).T
    aligned, consensus, perms = consensus_align([lam])
    np.testing.assert_allclose(consensus, lam, rtol=1e-15)
    assert perms[0].mapping == (0, 1, 2)


def test_consensus_of_permuted_copies():
    rng = np.random.default_rng(6)
    lam = rng.dirichlet(np.full(12, 0.4), size=4).T
    reps = [lam[:, rng.permutation(4)] for _ in range(10)]
    reps[0] = lam
    _, consensus, _ = consensus_align(reps)
    np.testing.assert_allclose(consensus, lam, atol=1e-10)


def test_consensus_near_permutation_recovered():
    rng = np.random.default_rng(7)
    lam = rng.dirichlet(np.full(12, 0.4), size=4).T
    perm = [2, 3, 0, 1]
    noisy = np.abs(lam[:, perm] + rng.normal(scale=1e-3, size=lam.shape))
    _, _, perms = consensus_align([lam, noisy / noisy.sum(axis=0)])
    # Replicate column perms[1].mapping[j] matches reference column j.
    assert [perm[m] for m in perms[1].mapping] == [0, 1, 2, 3]


def test_consensus_errors():
    with pytest.raises(DataValidationError, match="at least one"):
        consensus_align([])
    with pytest.raises(DataValidationError, match="replicate 1"):
        consensus_align([np.ones((3, 2)), np.ones((4, 2))])


def test_consensus_columns_on_simplex():
    rng = np.random.default_rng(8)
    reps = [rng.dirichlet(np.ones(7), size=3).T for _ in range(5)]
    _, consensus, _ = consensus_align(reps)
    np.testing.assert_allclose(consensus.sum(axis=0), 1.0, atol=1e-14)
