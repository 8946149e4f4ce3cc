import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentrank.exceptions import ValidationError
from latentrank.model import (
    ComparisonDataset,
    DirichletPrior,
    GroundTruthModel,
    PairDistribution,
    PairIndex,
    RankingMatrix,
    build_B,
    comparison_pmf,
    find_novel_pairs,
    index_to_pair,
    pair_to_index,
    permutation_from_scores,
    point_mass_prior,
    ranking_from_permutation,
    sample_clustered_prior,
    sample_comparisons,
    sample_dataset,
)

from conftest import cyclic_model, cyclic_sigma


def row(i, j, Q=3):
    """Row of the 1-based pair (i, j)."""
    return pair_to_index(i - 1, j - 1, Q)


# ---------------------------------------------------------------- indexing


@given(st.integers(2, 40).flatmap(lambda Q: st.tuples(st.just(Q), st.integers(0, Q * (Q - 1) - 1))))
def test_pair_index_roundtrip(args):
    Q, w = args
    i, j = index_to_pair(w, Q)
    assert i != j and pair_to_index(i, j, Q) == w


def test_pair_index_tables_are_consistent():
    idx = PairIndex(6)
    assert sorted(idx.pairs[:, 0] * 6 + idx.pairs[:, 1]) == sorted(
        i * 6 + j for i in range(6) for j in range(6) if i != j
    )
    assert np.array_equal(idx.flips[idx.flips], np.arange(idx.W))
    assert np.array_equal(idx.unordered_of[idx.forward], np.arange(15))


def test_pair_index_rejects_bad_input():
    with pytest.raises(ValidationError):
        pair_to_index(1, 1, 3)
    with pytest.raises(ValidationError):
        index_to_pair(6, 3)


# ---------------------------------------------------------------- rankings


def test_identity_order_column():
    col = ranking_from_permutation([0, 1, 2])
    ones = {row(1, 2), row(1, 3), row(2, 3)}
    assert {int(w) for w in np.flatnonzero(col)} == ones


def test_two_item_reversed():
    col = ranking_from_permutation([1, 0])
    assert col.tolist() == [0, 1]  # rows (1,2), (2,1)


def test_permutation_validation():
    with pytest.raises(ValidationError):
        ranking_from_permutation([0, 0, 1])
    with pytest.raises(ValidationError):
        RankingMatrix(np.ones((6, 1)), 3)


def test_scores_to_positions():
    assert permutation_from_scores([0.1, 3.0, 2.0]).tolist() == [2, 0, 1]
    # equal scores: lower item index on top
    assert permutation_from_scores([1.0, 1.0, 0.0]).tolist() == [0, 1, 2]


def _transitive_by_triples(M, Q):
    return all(not (M[a, b] and M[b, c]) or M[a, c] for a, b, c in itertools.permutations(range(Q), 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_permutation_matrices_are_complementary_and_transitive(Q, K, seed):
    rng = np.random.default_rng(seed)
    sigma = RankingMatrix.from_permutations([rng.permutation(Q) for _ in range(K)])
    idx = PairIndex(Q)
    assert np.all(sigma.sigma[idx.forward] + sigma.sigma[idx.backward] == 1)
    for k in range(K):
        assert sigma.column_is_transitive(k)
        assert _transitive_by_triples(sigma.preference_matrix(k), Q)
    back = RankingMatrix.from_permutations(sigma.to_permutations())
    assert np.array_equal(back.sigma, sigma.sigma)


def test_cycle_is_not_transitive():
    sigma = np.zeros((6, 1), dtype=int)
    for i, j in [(1, 2), (2, 3), (3, 1)]:
        sigma[row(i, j)] = 1
    assert not RankingMatrix(sigma, 3).is_transitive()


# ---------------------------------------------------------------- novel pairs


def test_cyclic_novel_pairs():
    novel = find_novel_pairs(cyclic_sigma())
    assert novel.separable
    assert [c.tolist() for c in novel.clusters] == [[row(1, 3)], [row(2, 1)], [row(3, 2)]]
    assert sorted(novel.non_novel.tolist()) == sorted([row(1, 2), row(2, 3), row(3, 1)])


def test_single_ranking_every_preferred_pair_is_novel():
    sigma = RankingMatrix.from_permutations([[2, 0, 3, 1]])
    novel = find_novel_pairs(sigma)
    assert novel.separable and sorted(novel.clusters[0]) == sorted(np.flatnonzero(sigma.sigma[:, 0]))


def test_identical_columns_not_separable():
    novel = find_novel_pairs(RankingMatrix.from_permutations([[0, 1, 2], [0, 1, 2]]))
    assert not novel.separable and all(len(c) == 0 for c in novel.clusters)


def _novel_brute(s):
    W, K = s.shape
    clusters = [[] for _ in range(K)]
    for w in range(W):
        owners = [k for k in range(K) if s[w, k] == 1]
        if len(owners) == 1:
            clusters[owners[0]].append(w)
    return clusters


def test_novel_pairs_match_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(500):
        Q, K = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        sigma = RankingMatrix.from_permutations([rng.permutation(Q) for _ in range(K)])
        got = find_novel_pairs(sigma)
        want = _novel_brute(sigma.sigma)
        assert [c.tolist() for c in got.clusters] == want
        assert got.separable == all(want)


# ---------------------------------------------------------------- B and pmf


def test_B_columns_sum_to_one():
    rng = np.random.default_rng(3)
    for _ in range(100):
        Q, K = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        sigma = RankingMatrix.from_permutations([rng.permutation(Q) for _ in range(K)])
        mu = rng.dirichlet(np.ones(Q * (Q - 1) // 2))
        B = build_B(sigma, PairDistribution(mu / mu.sum(), Q))
        assert np.allclose(B.sum(axis=0), 1, atol=1e-12, rtol=0)
        assert np.all(B >= 0)


def test_single_identity_ranking_B():
    B = build_B(RankingMatrix.from_permutations([[0, 1, 2]]), PairDistribution.uniform(3))
    want = np.zeros(6)
    want[[row(1, 2), row(1, 3), row(2, 3)]] = 1 / 3
    assert np.allclose(B[:, 0], want)


def test_cyclic_B_and_pmf():
    B = build_B(cyclic_sigma(), PairDistribution.uniform(3))
    assert np.allclose(B.sum(axis=0), 1)
    assert np.allclose(B[row(1, 3)], [1 / 3, 0, 0])
    p = comparison_pmf(np.full(3, 1 / 3), B)
    assert p[row(1, 2)] == pytest.approx(2 / 9, abs=1e-15)
    assert p.sum() == pytest.approx(1)
    assert np.allclose(comparison_pmf(np.eye(3)[1], B), B[:, 1])


def test_pmf_rejects_off_simplex():
    B = build_B(cyclic_sigma(), PairDistribution.uniform(3))
    with pytest.raises(ValidationError):
        comparison_pmf([0.5, 0.6, 0.0], B)


def test_mu_validation():
    with pytest.raises(ValidationError):
        PairDistribution([0.5, 0.5, 0.0], 3)
    with pytest.raises(ValidationError):
        PairDistribution([0.5, 0.5], 3)


# ---------------------------------------------------------------- priors


def test_vertex_prior_moments():
    p = sample_clustered_prior(np.full(3, 1 / 3))
    assert np.allclose(p.R, np.eye(3) / 3)
    assert np.allclose(point_mass_prior([1.0]).R, [[1.0]])
    draws = sample_clustered_prior([0.5, 0.5]).sample(np.random.default_rng(0), 200)
    assert np.all(np.isin(draws, [0.0, 1.0])) and np.all(draws.sum(axis=1) == 1)


def test_dirichlet_R_matches_sampling():
    prior = DirichletPrior([0.4, 1.0, 2.5])
    T = prior.sample(np.random.default_rng(1), 400_000)
    assert np.allclose(T.T @ T / len(T), prior.R, atol=3e-3)
    assert np.allclose(prior.a, [0.4 / 3.9, 1 / 3.9, 2.5 / 3.9])


def test_tiny_alpha_sampling_stays_on_simplex():
    T = DirichletPrior.from_mean([0.5, 0.5], 1e-4).sample(np.random.default_rng(2), 1000)
    assert np.all(np.isfinite(T)) and np.allclose(T.sum(axis=1), 1)


# ---------------------------------------------------------------- sampling


def test_single_ranking_users_always_agree():
    sigma = RankingMatrix.from_permutations([[3, 0, 2, 1]])
    model = GroundTruthModel(sigma, PairDistribution.uniform(4), DirichletPrior([1.0]))
    data = sample_dataset(model, 50, 20, seed=0)
    assert np.all(sigma.sigma[data.pairs, 0] == 1)


def test_sampling_is_seeded():
    model = cyclic_model("dirichlet")
    a, b = sample_dataset(model, 30, 10, 5), sample_dataset(model, 30, 10, 5)
    assert np.array_equal(a.pairs, b.pairs)
    assert not np.array_equal(a.pairs, sample_dataset(model, 30, 10, 6).pairs)


def test_degenerate_prior_pmf_limit():
    model = GroundTruthModel(cyclic_sigma(), PairDistribution.uniform(3), point_mass_prior([0, 1, 0]))
    data = sample_dataset(model, 2000, 50, 1)
    freq = np.bincount(data.pairs, minlength=6) / len(data.pairs)
    assert np.abs(freq - model.B[:, 1]).max() < 0.01


def test_pair_frequencies_within_binomial_bands():
    model = cyclic_model("dirichlet")
    data = sample_dataset(model, 5000, 300, 11)
    p = model.B @ model.prior.a
    n = len(data.pairs)
    freq = np.bincount(data.pairs, minlength=6)
    # per-user correlation inflates the variance; the band uses the user
    # level variance of the counts instead of the binomial one
    counts = data.counts().toarray()
    se = counts.std(axis=1) * np.sqrt(data.M)
    assert np.all(np.abs(freq - n * p) <= 3 * se)


def test_sample_comparisons_chi_square():
    from scipy.stats import chisquare

    model = cyclic_model("dirichlet")
    theta = np.array([0.2, 0.5, 0.3])
    w = sample_comparisons(model, theta, 100_000, np.random.default_rng(4))
    p = comparison_pmf(theta, model.B)
    obs = np.bincount(w, minlength=6)
    assert chisquare(obs, 100_000 * p).pvalue > 0.001


def test_dataset_validation_and_counts():
    data = ComparisonDataset.from_lists(3, [[0, 0, 5], [], [2]])
    assert data.M == 3 and data.N_m.tolist() == [3, 0, 1]
    X = data.counts().toarray()
    assert X[0, 0] == 2 and X[5, 0] == 1 and X[2, 2] == 1 and X.sum() == 4
    with pytest.raises(ValidationError):
        ComparisonDataset.from_lists(3, [[6]])
    sub = data.subset([2, 0])
    assert sub.user(0).tolist() == [2]
