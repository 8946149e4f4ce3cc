import numpy as np
import pytest

from latentrank.model import (
    DirichletPrior,
    GroundTruthModel,
    PairDistribution,
    RankingMatrix,
    random_separable_sigma,
    sample_clustered_prior,
)

# 1 > 2 > 3, 2 > 3 > 1, 3 > 1 > 2 as 0-based position vectors
CYCLIC_PERMS = [[0, 1, 2], [2, 0, 1], [1, 2, 0]]


def cyclic_sigma():
    return RankingMatrix.from_permutations(CYCLIC_PERMS)


def cyclic_model(prior="vertex"):
    p = sample_clustered_prior(np.full(3, 1 / 3)) if prior == "vertex" else DirichletPrior([0.3, 0.3, 0.3])
    return GroundTruthModel(cyclic_sigma(), PairDistribution.uniform(3), p)


def random_model(rng, Q=None, K=None, prior=None, mu="random"):
    """Separable model with a full-rank prior second moment."""
    K = K or int(rng.integers(2, 5))
    # for K >= 3 each unordered pair offers at most one novel row
    Q = Q or int(rng.integers(3 if K <= 3 else 4, 9))
    sigma = random_separable_sigma(Q, K, rng)
    U = Q * (Q - 1) // 2
    m = rng.dirichlet(np.full(U, 2.0)) if mu == "random" else np.full(U, 1 / U)
    prior = prior or ("vertex" if rng.random() < 0.5 else "dirichlet")
    if prior == "vertex":
        p = sample_clustered_prior(rng.dirichlet(np.full(K, 3.0)))
    else:
        p = DirichletPrior(rng.uniform(0.1, 2.0, size=K))
    return GroundTruthModel(sigma, PairDistribution(m / m.sum(), Q), p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
