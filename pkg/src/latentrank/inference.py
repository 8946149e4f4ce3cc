"""Per-user weights, Dirichlet prior fitting and predictive likelihoods."""

import csv
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, logsumexp, polygamma

from . import _rng
from .exceptions import ValidationError
from .model import DirichletPrior, PairIndex

log = logging.getLogger(__name__)

LIKELIHOOD_FLOOR = 1e-300
THETA_SMOOTHING = 1e-6
ALPHA_FLOOR = 1e-3
DEFAULT_SAMPLES = 512


def _q_from_w(W):
    Q = int(round((1 + np.sqrt(1 + 4 * W)) / 2))
    if Q * (Q - 1) != W:
        raise ValidationError(f"{W} rows is not Q(Q-1) for any Q")
    return Q


@dataclass(frozen=True)
class UserPosterior:
    theta_hat: np.ndarray
    loglik: float
    iterations: int
    skipped: int = 0
    history: list = field(default_factory=list)


def infer_theta(comparisons, B_hat, max_iter=500, tol=1e-8, record=False):
    """Maximum-likelihood mixing weights of one user by EM updates.

    Comparisons whose B_hat row is all zero have no likelihood under the model
    and are skipped.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    K = B_hat.shape[1]
    w, n = np.unique(np.asarray(comparisons, dtype=np.int64), return_counts=True)
    rows = B_hat[w]
    ok = rows.sum(axis=1) > 0
    skipped = int(n[~ok].sum())
    if skipped:
        log.debug("%d comparison(s) with an all-zero B_hat row skipped", skipped)
    rows, n = rows[ok], n[ok].astype(float)
    theta = np.full(K, 1.0 / K)
    if K == 1 or not len(n):
        ll = float(n @ np.log(rows @ theta)) if len(n) else 0.0
        return UserPosterior(theta, ll, 0, skipped, [ll] if record else [])
    total = n.sum()
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        p = rows @ theta
        if record:
            history.append(float(n @ np.log(p)))
        new = theta * ((n / p) @ rows) / total
        new /= new.sum()
        change = np.abs(new - theta).sum()
        theta = new
        if change < tol:
            break
    ll = float(n @ np.log(rows @ theta))
    if record:
        history.append(ll)
    return UserPosterior(theta, ll, it, skipped, history)


def infer_thetas(dataset, B_hat, **kwargs):
    """M x K matrix of per-user weights."""
    fits = [infer_theta(dataset.user(m), B_hat, **kwargs) for m in range(dataset.M)]
    skipped = sum(f.skipped for f in fits)
    if skipped:
        log.warning("%d comparison(s) with an all-zero B_hat row skipped", skipped)
    return np.array([f.theta_hat for f in fits])


def _inv_digamma(y, iters=5):
    y = np.asarray(y, dtype=float)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - digamma(1.0)))
    for _ in range(iters):
        x = x - (digamma(x) - y) / polygamma(1, x)
    return x


@dataclass(frozen=True)
class DirichletFit:
    prior: DirichletPrior
    iterations: int
    converged: bool
    smoothed: bool


def fit_dirichlet(theta_hats, tol=1e-6, max_iter=500, return_info=False):
    """Maximum-likelihood Dirichlet by the digamma fixed-point iteration."""
    T = np.atleast_2d(np.asarray(theta_hats, dtype=float))
    if T.shape[0] < 2:
        raise ValidationError("need at least two weight vectors")
    K = T.shape[1]
    if K == 1:
        fit = DirichletFit(DirichletPrior([1.0]), 0, True, False)
        return (fit.prior, fit) if return_info else fit.prior
    smoothed = bool(np.any(T <= 0))
    if smoothed:
        log.info("weights with zero components smoothed by %g", THETA_SMOOTHING)
        T = np.clip(T, 0, None) + THETA_SMOOTHING
    T = T / T.sum(axis=1, keepdims=True)
    logp = np.log(T).mean(axis=0)
    # moment-matching start
    m1, m2 = T.mean(axis=0), (T**2).mean(axis=0)
    var = m2[0] - m1[0] ** 2
    s = (m1[0] - m2[0]) / var if var > 1e-12 else 1e3
    alpha = np.maximum(m1 * max(s, ALPHA_FLOOR), ALPHA_FLOOR)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = np.maximum(_inv_digamma(digamma(alpha.sum()) + logp), ALPHA_FLOOR)
        delta = np.abs(new - alpha).max()
        alpha = new
        if delta < tol:
            converged = True
            break
    if not converged:
        log.warning("Dirichlet fit did not converge in %d iterations (alpha0 = %.3g)", max_iter, alpha.sum())
    fit = DirichletFit(DirichletPrior(alpha), it, converged, smoothed)
    return (fit.prior, fit) if return_info else fit.prior


@dataclass(frozen=True)
class PredictiveReport:
    normalized_loglik: float
    num_comparisons: int
    estimator: str
    total_loglik: float
    per_user: np.ndarray
    floored: int = 0


def _log_lik_per_sample(w, B_hat, thetas):
    """(log p(w | theta_s) for every sample s, number of floored comparisons)."""
    if not len(w):
        return np.zeros(len(thetas)), 0
    probs = B_hat[w] @ thetas.T
    dead = ~(probs > 0).any(axis=1)
    return np.log(np.maximum(probs, LIKELIHOOD_FLOOR)).sum(axis=0), int(dead.sum())


def _user_key(dataset, m):
    """Stable per-user stream key: the user label when present, else the position."""
    if dataset.user_labels is None:
        return m
    label = dataset.user_labels[m]
    try:
        return int(label) % 2**63
    except (TypeError, ValueError):
        return zlib.crc32(str(label).encode("utf8"))


def heldout_loglik(test_dataset, B_hat, prior, S=DEFAULT_SAMPLES, seed=0, condition_on=None):
    """Per-comparison predictive log-likelihood of held-out comparisons.

    Without ``condition_on`` each test user is new: log of the prior average of
    p(w_test | theta). With ``condition_on`` (a dataset aligned user by user)
    the prior draws are importance-weighted by p(w_train | theta).
    Draws for a user depend only on the seed and the user's label, so the
    result does not depend on the order of labelled users.
    """
    if S < 1:
        raise ValidationError("need S >= 1 samples")
    B_hat = np.asarray(B_hat, dtype=float)
    if condition_on is not None and condition_on.M != test_dataset.M:
        raise ValidationError("training and test datasets must list the same users")
    per_user = np.zeros(test_dataset.M)
    floored = 0
    for m in range(test_dataset.M):
        w = test_dataset.user(m)
        if not len(w):
            continue
        thetas = prior.sample(_rng.stream(seed, "heldout", _user_key(test_dataset, m)), S)
        ll, dead = _log_lik_per_sample(w, B_hat, thetas)
        floored += dead
        if condition_on is None:
            top = ll.max()
            per_user[m] = top + np.log(np.mean(np.exp(ll - top)))
        else:
            lw, _ = _log_lik_per_sample(condition_on.user(m), B_hat, thetas)
            per_user[m] = logsumexp(lw + ll) - logsumexp(lw)
    if floored:
        log.warning("%d test comparison(s) had zero probability under every sample", floored)
    n = int(len(test_dataset.pairs))
    total = float(per_user.sum())
    mode = "new-user" if condition_on is None else "new-comparison"
    return PredictiveReport(total / n if n else 0.0, n, f"importance-sampling[{mode}, S={S}]", total, per_user, floored)


def predict_comparison(i, j, theta_hat, B_hat):
    """Probability that item i is preferred over item j."""
    B_hat = np.asarray(B_hat, dtype=float)
    idx = PairIndex(_q_from_w(B_hat.shape[0]))
    theta_hat = np.asarray(theta_hat, dtype=float)
    fwd = float(B_hat[idx.index(i, j)] @ theta_hat)
    back = float(B_hat[idx.index(j, i)] @ theta_hat)
    if fwd + back <= 0:
        log.warning("no mass on pair (%d, %d); predicting 0.5", i, j)
        return 0.5
    return fwd / (fwd + back)


def rating_comparisons(train_ratings, target, s):
    """Ordered pairs implied by giving ``target`` s stars; equal stars are ignored."""
    out = []
    for item, stars in train_ratings.items():
        if item == target or stars == s:
            continue
        out.append((target, item) if s > stars else (item, target))
    return out


def predict_rating(train_ratings, target_item, B_hat, theta_hat, star_range=range(1, 6), return_scores=False):
    """Star value whose implied comparisons are most likely; ties go to the smallest."""
    if not train_ratings:
        raise ValidationError("insufficient history: user has no training ratings")
    stars = list(star_range)
    scores = []
    usable = False
    for s in stars:
        pairs = rating_comparisons(train_ratings, target_item, s)
        usable |= bool(pairs)
        with np.errstate(divide="ignore"):
            scores.append(float(sum(np.log(predict_comparison(i, j, theta_hat, B_hat)) for i, j in pairs)))
    if not usable:
        raise ValidationError("insufficient history: no comparable training ratings")
    best = stars[int(np.argmax(scores))]
    return (best, scores) if return_scores else best


PREDICTION_HEADER = ["user", "item", "predicted", "score"]


def write_predictions_csv(path, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PREDICTION_HEADER)
        for r in rows:
            out.writerow([r["user"], r["item"], r["predicted"], repr(float(r["score"]))])
