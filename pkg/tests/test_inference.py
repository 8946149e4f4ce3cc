import csv
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import gammaln

from latentrank.exceptions import ValidationError
from latentrank.inference import (
    _log_lik_per_sample,
    fit_dirichlet,
    heldout_loglik,
    infer_theta,
    infer_thetas,
    predict_comparison,
    predict_rating,
    rating_comparisons,
    write_predictions_csv,
)
from latentrank.model import (
    ComparisonDataset,
    DirichletPrior,
    DiscretePrior,
    GroundTruthModel,
    PairDistribution,
    PairIndex,
    RankingMatrix,
    point_mass_prior,
    sample_dataset,
)

from conftest import cyclic_model, random_model


def _random_B(rng, W, K):
    B = rng.random((W, K)) * (rng.random((W, K)) < 0.8) + 1e-3
    return B / B.sum(axis=0)


# ---------------------------------------------------------------- infer_theta


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_em_loglik_never_decreases(K, seed):
    rng = np.random.default_rng(seed)
    B = _random_B(rng, 12, K)
    w = rng.integers(0, 12, size=int(rng.integers(1, 40)))
    fit = infer_theta(w, B, record=True)
    assert np.all(np.diff(fit.history) >= -1e-10)
    assert np.all(fit.theta_hat >= 0) and fit.theta_hat.sum() == pytest.approx(1)


def test_novel_comparisons_pick_their_ranking():
    B = cyclic_model().B
    w = PairIndex(3).index(0, 2)  # only the first ranking puts item 0 before item 2
    fit = infer_theta([w] * 10, B)
    assert np.allclose(fit.theta_hat, [1, 0, 0])


def test_identical_columns_keep_uniform_weights():
    B = np.tile(np.full(6, 1 / 6)[:, None], (1, 3))
    assert np.allclose(infer_theta([0, 3, 5, 5], B).theta_hat, 1 / 3)


def test_single_ranking_weight_is_one():
    B = cyclic_model().B[:, :1]
    assert infer_theta([1, 2], B / B.sum()).theta_hat.tolist() == [1.0]


def test_theta_maximises_likelihood():
    rng = np.random.default_rng(3)
    B = _random_B(rng, 20, 3)
    w = rng.integers(0, 20, size=60)
    fit = infer_theta(w, B, tol=1e-12, max_iter=20_000)
    for theta in rng.dirichlet(np.ones(3), size=500):
        assert np.log(B[w] @ theta).sum() <= fit.loglik + 1e-8


def test_dead_comparisons_are_skipped(caplog):
    B = cyclic_model().B.copy()
    B[4] = 0
    data = ComparisonDataset.from_lists(3, [[0, 4, 4], [1, 2]])
    with caplog.at_level(logging.WARNING, logger="latentrank.inference"):
        thetas = infer_thetas(data, B)
    assert thetas.shape == (2, 3)
    assert caplog.text.count("skipped") == 1 and "2 comparison" in caplog.text
    assert infer_theta([0, 4, 4], B).skipped == 2


# ---------------------------------------------------------------- fit_dirichlet


def _dirichlet_mle_by_optimizer(T):
    """Reference fit: direct maximisation of the Dirichlet log-likelihood."""
    logp = np.log(T).mean(axis=0)

    def nll(log_alpha):
        a = np.exp(log_alpha)
        return -(gammaln(a.sum()) - gammaln(a).sum() + ((a - 1) * logp).sum())

    res = minimize(nll, np.zeros(T.shape[1]), method="BFGS", options={"gtol": 1e-10})
    return np.exp(res.x)


def test_dirichlet_fit_recovers_alpha():
    rng = np.random.default_rng(0)
    truth = np.array([0.5, 0.5, 0.5])
    T = rng.dirichlet(truth, size=10_000)
    alpha, info = fit_dirichlet(T, return_info=True)
    assert info.converged and not info.smoothed
    assert np.all(np.abs(alpha.alpha - truth) <= 0.1 * truth)
    assert np.allclose(alpha.alpha, _dirichlet_mle_by_optimizer(T), rtol=1e-4)


def test_dirichlet_fit_matches_optimizer_on_random_alphas():
    rng = np.random.default_rng(1)
    for _ in range(5):
        K = int(rng.integers(2, 6))
        T = rng.dirichlet(rng.uniform(0.3, 5, K), size=2000)
        assert np.allclose(fit_dirichlet(T).alpha, _dirichlet_mle_by_optimizer(T), rtol=1e-4)


def test_identical_weights_give_concentrated_prior(caplog):
    point = np.array([0.2, 0.3, 0.5])
    with caplog.at_level(logging.WARNING, logger="latentrank.inference"):
        prior, info = fit_dirichlet(np.tile(point, (50, 1)), return_info=True)
    assert not info.converged and "did not converge" in caplog.text
    assert prior.alpha0 > 100
    assert np.allclose(prior.a, point, atol=1e-3)


def test_dirichlet_edge_cases():
    assert fit_dirichlet(np.ones((5, 1))).alpha.tolist() == [1.0]
    with pytest.raises(ValidationError):
        fit_dirichlet([[0.5, 0.5]])
    T = np.random.default_rng(2).dirichlet([1, 1, 1], size=200)
    T[0] = [1, 0, 0]
    prior, info = fit_dirichlet(T, return_info=True)
    assert info.smoothed and np.all(np.isfinite(prior.alpha))


# ---------------------------------------------------------------- heldout_loglik


def _one_ranking_model():
    sigma = RankingMatrix.from_permutations([[2, 0, 3, 1]])
    rng = np.random.default_rng(4)
    mu = rng.dirichlet(np.ones(6))
    return GroundTruthModel(sigma, PairDistribution(mu, 4), DirichletPrior([1.0]))


def test_single_ranking_loglik_is_mean_log_mu():
    model = _one_ranking_model()
    test = sample_dataset(model, 30, 7, 1)
    rep = heldout_loglik(test, model.B, model.prior, S=16, seed=3)
    want = np.log(model.mu.diag()[test.pairs]).mean()
    assert rep.normalized_loglik == pytest.approx(want, abs=1e-12)
    assert rep.num_comparisons == 210 and rep.floored == 0


@pytest.mark.parametrize("S", [1, 7, 64])
def test_point_mass_prior_equals_plug_in(S):
    model = cyclic_model("dirichlet")
    theta = np.array([0.2, 0.5, 0.3])
    test = sample_dataset(model, 20, 5, 2)
    plug_in = np.log((model.B @ theta)[test.pairs]).sum() / len(test.pairs)
    for cond in (None, sample_dataset(model, 20, 5, 3)):
        rep = heldout_loglik(test, model.B, point_mass_prior(theta), S=S, seed=S, condition_on=cond)
        assert rep.normalized_loglik == pytest.approx(plug_in, abs=1e-12)


def test_new_comparison_mode_matches_exact_posterior_predictive():
    # two-atom prior: the posterior predictive has a closed form
    B = cyclic_model().B
    atoms = np.array([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]])
    prior = DiscretePrior(atoms, np.array([0.5, 0.5]))
    train = ComparisonDataset.from_lists(3, [[0, 1], [2, 3, 4]])
    test = ComparisonDataset.from_lists(3, [[5, 0], [1]])
    want = 0.0
    for m in range(2):
        lw = np.log(B[train.user(m)] @ atoms.T).sum(axis=0)
        lt = np.log(B[test.user(m)] @ atoms.T).sum(axis=0)
        want += np.logaddexp.reduce(lw + lt) - np.logaddexp.reduce(lw)
    rep = heldout_loglik(test, B, prior, S=20_000, seed=0, condition_on=train)
    assert rep.normalized_loglik == pytest.approx(want / 3, abs=0.02)


def test_loglik_ignores_user_order():
    model = cyclic_model("dirichlet")
    data = sample_dataset(model, 40, 6, 5)
    labelled = ComparisonDataset(data.Q, data.pairs, data.offsets, tuple(range(100, 140)))
    order = np.random.default_rng(0).permutation(40)
    a = heldout_loglik(labelled, model.B, model.prior, S=32, seed=1)
    b = heldout_loglik(labelled.subset(order), model.B, model.prior, S=32, seed=1)
    assert a.total_loglik == pytest.approx(b.total_loglik, abs=1e-9)


def _standard_error(test, B, prior, S, seed):
    """Delta-method standard error of the normalised new-user estimator."""
    from latentrank import _rng
    from latentrank.inference import _user_key

    var = 0.0
    for m in range(test.M):
        thetas = prior.sample(_rng.stream(seed, "heldout", _user_key(test, m)), S)
        lik = np.exp(_log_lik_per_sample(test.user(m), B, thetas)[0])
        var += lik.var(ddof=1) / (S * lik.mean() ** 2)
    return np.sqrt(var) / len(test.pairs)


def test_seed_changes_stay_within_standard_errors():
    model = cyclic_model("dirichlet")
    test = sample_dataset(model, 50, 6, 6)
    runs = [(heldout_loglik(test, model.B, model.prior, S=128, seed=s).normalized_loglik,
             _standard_error(test, model.B, model.prior, 128, s)) for s in range(6)]
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            (a, sa), (b, sb) = runs[i], runs[j]
            assert abs(a - b) < 3 * np.hypot(sa, sb)


def test_impossible_test_comparison_is_floored(caplog):
    B = cyclic_model().B.copy()
    B[0] = 0
    test = ComparisonDataset.from_lists(3, [[0, 1]])
    with caplog.at_level(logging.WARNING, logger="latentrank.inference"):
        rep = heldout_loglik(test, B, cyclic_model().prior, S=4)
    assert rep.floored == 1 and np.isfinite(rep.normalized_loglik)
    with pytest.raises(ValidationError):
        heldout_loglik(test, B, cyclic_model().prior, S=0)


# ---------------------------------------------------------------- predict_comparison


def test_cyclic_uniform_preference():
    assert predict_comparison(0, 1, np.full(3, 1 / 3), cyclic_model().B) == pytest.approx(2 / 3)


def test_vertex_weights_reproduce_sigma():
    rng = np.random.default_rng(7)
    model = random_model(rng)
    idx = PairIndex(model.Q)
    for k in range(model.K):
        theta = np.eye(model.K)[k]
        for w in range(model.W):
            i, j = idx.pair(w)
            assert predict_comparison(i, j, theta, model.B) == model.sigma.sigma[w, k]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_comparison_probabilities_are_complementary(Q, K, seed):
    rng = np.random.default_rng(seed)
    B = _random_B(rng, Q * (Q - 1), K)
    theta = rng.dirichlet(np.ones(K))
    i, j = rng.choice(Q, 2, replace=False)
    p, q = predict_comparison(i, j, theta, B), predict_comparison(j, i, theta, B)
    assert 0 <= p <= 1 and p + q == pytest.approx(1, abs=1e-15)


def test_unsupported_pair_predicts_half(caplog):
    B = cyclic_model().B.copy()
    w = PairIndex(3).index(0, 1)
    B[[w, PairIndex(3).flip(w)]] = 0
    with caplog.at_level(logging.WARNING, logger="latentrank.inference"):
        assert predict_comparison(0, 1, np.full(3, 1 / 3), B) == 0.5
    assert "no mass" in caplog.text


# ---------------------------------------------------------------- predict_rating

A, B_, C, D = range(4)


def test_rating_comparison_sets():
    history = {A: 4, B_: 2, C: 5}
    assert sorted(rating_comparisons(history, D, 3)) == sorted([(A, D), (D, B_), (C, D)])
    assert sorted(rating_comparisons(history, D, 1)) == sorted([(A, D), (B_, D), (C, D)])
    assert sorted(rating_comparisons(history, D, 4)) == sorted([(D, B_), (C, D)])


def _single_ranking_B(perm):
    sigma = RankingMatrix.from_permutations([perm])
    return GroundTruthModel(sigma, PairDistribution.uniform(len(perm)), DirichletPrior([1.0])).B


def test_target_on_top_gets_five_stars():
    B = _single_ranking_B([1, 2, 3, 0])  # item D first
    assert predict_rating({A: 4, B_: 2, C: 5}, D, B, [1.0]) == 5


def test_flat_model_ties_to_lowest_star():
    B = np.full((12, 1), 1 / 12)
    # a half-star history makes every candidate star imply the same number of comparisons
    star, scores = predict_rating({A: 2.5}, D, B, [1.0], return_scores=True)
    assert star == 1 and len(set(scores)) == 1


def test_rating_history_errors():
    B = _single_ranking_B([0, 1, 2, 3])
    with pytest.raises(ValidationError, match="insufficient history"):
        predict_rating({}, D, B, [1.0])
    with pytest.raises(ValidationError, match="insufficient history"):
        predict_rating({D: 3}, D, B, [1.0])


def test_raising_beaten_items_never_lowers_prediction():
    # single ranking, consistent histories: the prediction is the highest star
    # among the items the target beats
    rng = np.random.default_rng(8)
    Q = 6
    for _ in range(200):
        perm = rng.permutation(Q)
        target = int(rng.integers(Q))
        B = _single_ranking_B(perm)
        below = [i for i in range(Q) if i != target and perm[i] > perm[target]]
        above = [i for i in range(Q) if i != target and perm[i] < perm[target]]
        if not below:
            continue
        cut = int(rng.integers(1, 6))
        hist = {i: int(rng.integers(1, cut + 1)) for i in below}
        hist.update({i: int(rng.integers(cut, 6)) for i in above})
        before = predict_rating(hist, target, B, [1.0])
        assert before == max(hist[i] for i in below)
        raised = dict(hist)
        for i in below:
            raised[i] = min(raised[i] + 1, min([hist[a] for a in above] + [5]))
        assert predict_rating(raised, target, B, [1.0]) >= before


def test_predictions_csv(tmp_path):
    path = tmp_path / "pred.csv"
    write_predictions_csv(path, [{"user": 3, "item": "1>2", "predicted": 1, "score": 2 / 3}])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["user", "item", "predicted", "score"]
    assert rows[1][:3] == ["3", "1>2", "1"] and float(rows[1][3]) == 2 / 3
