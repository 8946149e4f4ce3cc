"""
Recovery error as the number of users grows
===========================================

Ten items, three random rankings, 300 comparisons per user and a sparse
Dirichlet prior (alpha0 = 0.1), so most users follow one ranking closely.
Prints one metrics row per run in the CSV layout the ``eval`` command writes.
"""

import sys

import numpy as np

from latentrank import DirichletPrior, GroundTruthModel, PairDistribution, RankingMatrix, learn_rankings, sample_dataset
from latentrank.evaluation import METRICS_HEADER, kendall_tau_error

SEEDS = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
Q, K, N = 10, 3, 300

print(",".join(METRICS_HEADER))
for M in (1000, 4000, 16000):
    errs = []
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        sigma = RankingMatrix.from_permutations([rng.permutation(Q) for _ in range(K)])
        prior = DirichletPrior.from_mean(rng.dirichlet(np.ones(K)), 0.1)
        model = GroundTruthModel(sigma, PairDistribution.uniform(Q), prior)
        est = learn_rankings(sample_dataset(model, M, N, seed), K, seed=seed)
        e = kendall_tau_error(sigma, est.sigma_hat)
        errs.append(e.mean_error)
        cols = ";".join(f"{x:.4f}" for x in e.per_column_error)
        print(f"M{M}-s{seed},{M},{N},{K},{Q},{seed},{e.mean_error:.4f},{cols}")
    print(f"# M={M}: median {np.median(errs):.4f}, mean {np.mean(errs):.4f}")
