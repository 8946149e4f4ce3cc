"""Generative model for pairwise comparisons from K shared latent rankings.

Each user m draws mixing weights theta_m from a prior on the K-simplex.
Every comparison draws an unordered pair {i, j} from mu, a ranking token
z ~ Multinomial(theta_m), and reports the orientation preferred by ranking z.

Rows of every W x K matrix are indexed by ordered pairs (i, j), i != j, with
the fixed convention ``w = i*(Q-1) + (j if j < i else j-1)`` (0-based).
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _rng
from .exceptions import ValidationError

PAIR_CONVENTION = "pairidx-v1"
SIMPLEX_TOL = 1e-9


# ----------------------------------------------------------------------------
# universe and pair indexing
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ItemUniverse:
    Q: int
    item_labels: Optional[tuple] = None

    def __post_init__(self):
        if int(self.Q) != self.Q or self.Q < 2:
            raise ValidationError(f"need Q >= 2 items, got {self.Q!r}")
        if self.item_labels is not None:
            labels = tuple(str(x) for x in self.item_labels)
            if len(labels) != self.Q:
                raise ValidationError("item_labels must have exactly Q entries")
            if len(set(labels)) != len(labels):
                raise ValidationError("item_labels must be unique")
            object.__setattr__(self, "item_labels", labels)

    @property
    def W(self):
        return self.Q * (self.Q - 1)


def pair_to_index(i, j, Q):
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any(i == j):
        raise ValidationError("ordered pair needs two distinct items")
    if np.any((i < 0) | (i >= Q) | (j < 0) | (j >= Q)):
        raise ValidationError(f"item index out of range for Q={Q}")
    w = i * (Q - 1) + np.where(j < i, j, j - 1)
    return int(w) if w.ndim == 0 else w


def index_to_pair(w, Q):
    w = np.asarray(w)
    if np.any((w < 0) | (w >= Q * (Q - 1))):
        raise ValidationError(f"pair index out of range for Q={Q}")
    i, r = np.divmod(w, Q - 1)
    j = np.where(r < i, r, r + 1)
    if w.ndim == 0:
        return int(i), int(j)
    return i, j


class PairIndex:
    """Vectorised tables for the ordered-pair convention on Q items."""

    def __init__(self, Q):
        self.Q = ItemUniverse(Q).Q
        self.W = self.Q * (self.Q - 1)
        w = np.arange(self.W)
        i, j = index_to_pair(w, self.Q)
        self.pairs = np.stack([i, j], axis=1)
        self.flips = pair_to_index(j, i, self.Q)
        lo, hi = np.triu_indices(self.Q, k=1)
        self.unordered = np.stack([lo, hi], axis=1)
        # forward[u] is the row (lo, hi); backward[u] is (hi, lo)
        self.forward = pair_to_index(lo, hi, self.Q)
        self.backward = pair_to_index(hi, lo, self.Q)
        # unordered-pair id of every ordered row
        self.unordered_of = np.empty(self.W, dtype=np.int64)
        self.unordered_of[self.forward] = np.arange(len(lo))
        self.unordered_of[self.backward] = np.arange(len(lo))

    def index(self, i, j):
        return pair_to_index(i, j, self.Q)

    def pair(self, w):
        return index_to_pair(w, self.Q)

    def flip(self, w):
        return self.flips[w]

    def __len__(self):
        return self.W


# ----------------------------------------------------------------------------
# rankings
# ----------------------------------------------------------------------------


def _check_permutation(perm, Q=None):
    perm = np.asarray(perm)
    if perm.ndim != 1 or (Q is not None and len(perm) != Q):
        raise ValidationError("permutation has the wrong length")
    if not np.array_equal(np.sort(perm), np.arange(len(perm))):
        raise ValidationError(f"not a permutation of 0..{len(perm) - 1}: {perm.tolist()}")
    return perm.astype(np.int64)


def ranking_from_permutation(perm, universe=None):
    """Column of the ranking matrix for one ranking.

    ``perm[i]`` is the position of item i (0 is the top); the returned
    W-vector holds 1 at row (i, j) iff item i is ranked above item j.
    """
    Q = None if universe is None else (universe.Q if isinstance(universe, ItemUniverse) else int(universe))
    perm = _check_permutation(perm, Q)
    idx = PairIndex(len(perm))
    i, j = idx.pairs[:, 0], idx.pairs[:, 1]
    return (perm[i] < perm[j]).astype(np.int8)


def permutation_from_scores(scores):
    """Positions induced by sorting scores, highest score on top.

    Equal scores are ordered by ascending item index.
    """
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    perm = np.empty(len(scores), dtype=np.int64)
    perm[order] = np.arange(len(scores))
    return perm


@dataclass(frozen=True)
class RankingMatrix:
    """W x K binary matrix; column k encodes ranking k over ordered pairs."""

    sigma: np.ndarray
    Q: int

    def __post_init__(self):
        sigma = np.asarray(self.sigma)
        if sigma.ndim == 1:
            sigma = sigma[:, None]
        W = self.Q * (self.Q - 1)
        if sigma.ndim != 2 or sigma.shape[0] != W:
            raise ValidationError(f"sigma must have W={W} rows, got shape {sigma.shape}")
        if not np.all((sigma == 0) | (sigma == 1)):
            raise ValidationError("sigma entries must be 0 or 1")
        sigma = sigma.astype(np.int8)
        idx = PairIndex(self.Q)
        if not np.all(sigma[idx.forward] + sigma[idx.backward] == 1):
            raise ValidationError("complementarity violated: sigma[(i,j)] + sigma[(j,i)] != 1")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_permutations(cls, perms):
        perms = [np.asarray(p) for p in perms]
        Q = len(perms[0])
        cols = [ranking_from_permutation(p, Q) for p in perms]
        return cls(np.stack(cols, axis=1), Q)

    @property
    def K(self):
        return self.sigma.shape[1]

    @property
    def W(self):
        return self.sigma.shape[0]

    def column_is_transitive(self, k):
        """True iff column k is a total order (no preference cycles)."""
        M = self.preference_matrix(k)
        # a tournament is transitive iff its win counts are 0..Q-1
        return np.array_equal(np.sort(M.sum(axis=1)), np.arange(self.Q))

    def is_transitive(self):
        return all(self.column_is_transitive(k) for k in range(self.K))

    def preference_matrix(self, k):
        """Q x Q 0/1 matrix with [i, j] = 1 iff column k prefers i over j."""
        idx = PairIndex(self.Q)
        M = np.zeros((self.Q, self.Q), dtype=np.int8)
        M[idx.pairs[:, 0], idx.pairs[:, 1]] = self.sigma[:, k]
        return M

    def to_permutations(self):
        """Positions per column; only meaningful for transitive columns."""
        perms = []
        for k in range(self.K):
            wins = self.preference_matrix(k).sum(axis=1)
            perms.append(permutation_from_scores(wins))
        return perms


@dataclass(frozen=True)
class NovelPairs:
    clusters: list  # clusters[k]: sorted array of rows novel to ranking k
    non_novel: np.ndarray
    separable: bool


def find_novel_pairs(sigma):
    """Rows preferred by exactly one ranking, grouped by that ranking."""
    s = sigma.sigma if isinstance(sigma, RankingMatrix) else np.asarray(sigma)
    support = s.sum(axis=1)
    clusters = [np.flatnonzero((support == 1) & (s[:, k] == 1)) for k in range(s.shape[1])]
    non_novel = np.flatnonzero(support != 1)
    return NovelPairs(clusters, non_novel, all(len(c) > 0 for c in clusters))


def random_permutations(Q, K, rng):
    return [rng.permutation(Q) for _ in range(K)]


def random_separable_sigma(Q, K, rng, max_tries=10_000):
    """Draw K uniform random rankings, redrawing until separable."""
    for _ in range(max_tries):
        sigma = RankingMatrix.from_permutations(random_permutations(Q, K, rng))
        if find_novel_pairs(sigma).separable:
            return sigma
    raise ValidationError(f"no separable draw for Q={Q}, K={K} in {max_tries} tries")


# ----------------------------------------------------------------------------
# pair distribution and B
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PairDistribution:
    """Probabilities of the unordered pairs, in ``PairIndex.unordered`` order."""

    mu: np.ndarray
    Q: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        U = self.Q * (self.Q - 1) // 2
        if mu.shape != (U,):
            raise ValidationError(f"mu must have {U} entries, got {mu.shape}")
        if np.any(mu <= 0):
            raise ValidationError("mu must be strictly positive on every pair")
        if abs(mu.sum() - 1.0) > 1e-9:
            raise ValidationError(f"mu must sum to 1, sums to {mu.sum()!r}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls, Q):
        U = Q * (Q - 1) // 2
        return cls(np.full(U, 1.0 / U), Q)

    def diag(self):
        """The W diagonal entries of P: mu of the unordered pair of each row."""
        return self.mu[PairIndex(self.Q).unordered_of]


def build_B(sigma, mu):
    """B = P sigma, the W x K comparison-probability matrix."""
    if sigma.Q != mu.Q:
        raise ValidationError(f"dimension mismatch: sigma has Q={sigma.Q}, mu has Q={mu.Q}")
    return mu.diag()[:, None] * sigma.sigma.astype(float)


def comparison_pmf(theta, B):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (B.shape[1],):
        raise ValidationError(f"theta must have length K={B.shape[1]}")
    if np.any(theta < -SIMPLEX_TOL) or abs(theta.sum() - 1.0) > SIMPLEX_TOL:
        raise ValidationError("theta is not on the probability simplex")
    return B @ theta


# ----------------------------------------------------------------------------
# priors on the simplex
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletPrior:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if alpha.ndim != 1 or np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValidationError("Dirichlet alpha must be a vector of positive reals")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_mean(cls, a, alpha0):
        return cls(alpha0 * np.asarray(a, dtype=float))

    @property
    def K(self):
        return len(self.alpha)

    @property
    def alpha0(self):
        return float(self.alpha.sum())

    @property
    def a(self):
        return self.alpha / self.alpha0

    @property
    def R(self):
        # E[theta theta^T] in closed form
        a0 = self.alpha0
        R = np.outer(self.a, self.alpha) / (a0 + 1.0)
        R[np.diag_indices(self.K)] = self.a * (self.alpha + 1.0) / (a0 + 1.0)
        return R

    def sample(self, rng, size):
        if self.K == 1:
            return np.ones((size, 1))
        theta = rng.dirichlet(self.alpha, size=size)
        bad = ~np.isfinite(theta).all(axis=1)
        if bad.any():
            # every gamma draw underflowed; fall back to the dominant vertex
            # drawn with probability proportional to alpha
            k = rng.choice(self.K, size=int(bad.sum()), p=self.a)
            theta[bad] = np.eye(self.K)[k]
        return theta


@dataclass(frozen=True)
class DiscretePrior:
    """Finite mixture of point masses on the simplex.

    The vertex prior (each user follows a single ranking) is the case
    ``points = I_K``.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if points.shape[0] != len(weights):
            raise ValidationError("one weight per support point required")
        if np.any(points < -SIMPLEX_TOL) or np.any(np.abs(points.sum(axis=1) - 1) > SIMPLEX_TOL):
            raise ValidationError("support points must lie on the simplex")
        if np.any(weights < 0) or abs(weights.sum() - 1) > SIMPLEX_TOL:
            raise ValidationError("weights must be a probability vector")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def K(self):
        return self.points.shape[1]

    @property
    def a(self):
        return self.weights @ self.points

    @property
    def R(self):
        return (self.points * self.weights[:, None]).T @ self.points

    def sample(self, rng, size):
        which = rng.choice(len(self.weights), size=size, p=self.weights)
        return self.points[which].copy()


def sample_clustered_prior(b):
    """Prior putting mass b_k on vertex e_k, so a = b and R = diag(b)."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if np.any(b < 0) or abs(b.sum() - 1) > SIMPLEX_TOL:
        raise ValidationError("b must lie on the simplex")
    if np.any(b == 0):
        raise ValidationError("every vertex needs positive mass, otherwise R = diag(b) is singular")
    return DiscretePrior(np.eye(len(b)), b)


def point_mass_prior(theta):
    return DiscretePrior(np.asarray(theta, dtype=float)[None, :], np.ones(1))


# ----------------------------------------------------------------------------
# ground truth and data
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthModel:
    sigma: RankingMatrix
    mu: PairDistribution
    prior: object  # DirichletPrior or DiscretePrior
    universe: Optional[ItemUniverse] = None

    def __post_init__(self):
        if self.universe is None:
            object.__setattr__(self, "universe", ItemUniverse(self.sigma.Q))
        if self.universe.Q != self.sigma.Q or self.mu.Q != self.sigma.Q:
            raise ValidationError("universe, sigma and mu disagree on Q")
        if self.prior.K != self.sigma.K:
            raise ValidationError(f"prior has K={self.prior.K}, sigma has K={self.sigma.K}")

    @property
    def Q(self):
        return self.sigma.Q

    @property
    def K(self):
        return self.sigma.K

    @property
    def W(self):
        return self.sigma.W

    @cached_property
    def B(self):
        return build_B(self.sigma, self.mu)


@dataclass(frozen=True)
class ComparisonDataset:
    """Per-user sequences of ordered-pair row indices.

    Stored flat: user m's comparisons, in arrival order, are
    ``pairs[offsets[m]:offsets[m + 1]]``.
    """

    Q: int
    pairs: np.ndarray
    offsets: np.ndarray
    user_labels: Optional[tuple] = None

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        W = self.Q * (self.Q - 1)
        if offsets.ndim != 1 or len(offsets) < 1 or offsets[0] != 0 or offsets[-1] != len(pairs):
            raise ValidationError("offsets must start at 0 and end at len(pairs)")
        if np.any(np.diff(offsets) < 0):
            raise ValidationError("offsets must be non-decreasing")
        if len(pairs) and (pairs.min() < 0 or pairs.max() >= W):
            raise ValidationError(f"comparison index outside [0, {W})")
        if self.user_labels is not None and len(self.user_labels) != len(offsets) - 1:
            raise ValidationError("one user label per user required")
        pairs.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_lists(cls, Q, per_user, user_labels=None):
        per_user = [np.asarray(u, dtype=np.int64) for u in per_user]
        offsets = np.concatenate([[0], np.cumsum([len(u) for u in per_user])]).astype(np.int64)
        pairs = np.concatenate(per_user) if per_user else np.zeros(0, dtype=np.int64)
        return cls(Q, pairs, offsets, user_labels)

    @property
    def M(self):
        return len(self.offsets) - 1

    @property
    def W(self):
        return self.Q * (self.Q - 1)

    @property
    def N_m(self):
        return np.diff(self.offsets)

    @property
    def user_index(self):
        """User id of every stored comparison."""
        return np.repeat(np.arange(self.M), self.N_m)

    def user(self, m):
        return self.pairs[self.offsets[m]:self.offsets[m + 1]]

    def __iter__(self):
        for m in range(self.M):
            yield self.user(m)

    def counts(self):
        """Sparse W x M count matrix X."""
        data = np.ones(len(self.pairs), dtype=np.int64)
        X = sp.csc_matrix((data, (self.pairs, self.user_index)), shape=(self.W, self.M))
        X.sum_duplicates()
        return X

    def subset(self, users):
        return ComparisonDataset.from_lists(
            self.Q,
            [self.user(m) for m in users],
            None if self.user_labels is None else tuple(self.user_labels[m] for m in users),
        )


def _orient(model, pair_ids, tokens):
    idx = PairIndex(model.Q)
    fwd = idx.forward[pair_ids]
    keep = model.sigma.sigma[fwd, tokens] == 1
    return np.where(keep, fwd, idx.backward[pair_ids])


def sample_dataset(model, M, N, seed, return_latent=False):
    """Draw M users with N comparisons each from the generative model.

    With ``return_latent`` the result is ``(dataset, theta, tokens)`` where
    theta is M x K and tokens is M x N.
    """
    if M < 1:
        raise ValidationError("need M >= 1 users")
    if N < 2:
        raise ValidationError("each user compares N >= 2 pairs")
    theta = model.prior.sample(_rng.stream(seed, "prior"), M)
    pair_ids = _rng.stream(seed, "pairs").choice(len(model.mu.mu), size=(M, N), p=model.mu.mu)
    u = _rng.stream(seed, "tokens").random((M, N))
    cum = np.cumsum(theta, axis=1)
    cum /= cum[:, -1:]
    tokens = np.empty((M, N), dtype=np.int64)
    # users in blocks keep the M x N x K comparison tensor small
    block = max(1, 2_000_000 // (N * model.K))
    for s in range(0, M, block):
        c = cum[s:s + block, None, :-1]
        tokens[s:s + block] = (u[s:s + block, :, None] >= c).sum(axis=2)
    w = _orient(model, pair_ids, tokens)
    data = ComparisonDataset(model.Q, w.ravel(), np.arange(M + 1, dtype=np.int64) * N)
    if return_latent:
        return data, theta, tokens
    return data


def sample_comparisons(model, theta, n, rng):
    """n comparisons from one user with fixed mixing weights theta."""
    theta = np.asarray(theta, dtype=float)
    comparison_pmf(theta, model.B)  # validates theta
    pair_ids = rng.choice(len(model.mu.mu), size=n, p=model.mu.mu)
    tokens = rng.choice(model.K, size=n, p=theta / theta.sum())
    return _orient(model, pair_ids, tokens)
