"""
From star ratings to predictions
================================

Star ratings become pairwise comparisons: the higher-rated item wins, and ties
are dropped, doubled or oriented at random. A fitted model then scores
held-out comparisons and predicts the star of an unseen item.

The model here is a known two-ranking mixture rather than one learned from
the ratings. Comparisons converted from ratings never repeat a pair within a
user, which leaves the co-occurrence diagonal empty, so ``learn`` warns on
such data.
"""

import tempfile
from pathlib import Path

import numpy as np

from latentrank import GroundTruthModel, PairDistribution, RankingMatrix, heldout_loglik, predict_rating
from latentrank.inference import infer_theta
from latentrank.ingest import ConversionPolicy, parse_ratings, ratings_to_comparisons, top_q_filter
from latentrank.model import DirichletPrior, index_to_pair, sample_dataset

RATINGS = """\
1::10::5::1
1::20::3::2
1::30::3::3
2::10::1::4
2::20::4::5
2::40::5::6
3::30::2::7
3::40::4::8
3::10::4::9
"""

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "ratings.dat"
    path.write_text(RATINGS)
    table = top_q_filter(parse_ratings(path), 4)

for tie in ("ignore", "both", "random"):
    data = ratings_to_comparisons(table, ConversionPolicy("full", tie, seed=1))
    i, j = index_to_pair(data.user(0), data.Q)
    pairs = sorted(zip(table.item_ids[i].tolist(), table.item_ids[j].tolist()))
    print(f"user 1, ties={tie:6s}: {pairs}")

# two rankings over the four items: 10 > 20 > 30 > 40 and its reverse
sigma = RankingMatrix.from_permutations([[0, 1, 2, 3], [3, 2, 1, 0]])
model = GroundTruthModel(sigma, PairDistribution.uniform(4), DirichletPrior([0.5, 0.5]))

# maximum-likelihood mixing weights of each user
data = ratings_to_comparisons(table, ConversionPolicy("full", "ignore"))
for m in range(data.M):
    theta = infer_theta(data.user(m), model.B).theta_hat
    print(f"user {table.user_ids[m]}: weights {np.round(theta, 3).tolist()}")

# user 1 follows the first ranking, which puts 40 last: every star up to the
# lowest rating (3) explains the history equally well and ties go to 1
history = table.user_ratings(0)
theta = infer_theta(data.user(0), model.B).theta_hat
star, scores = predict_rating(history, 3, model.B, theta, return_scores=True)
print("user 1, item 40: predicted", star, "scores", np.round(scores, 2).tolist())

# held-out log-likelihood per comparison for users drawn from the model
test = sample_dataset(model, 200, 10, seed=0)
rep = heldout_loglik(test, model.B, model.prior, S=512, seed=0)
print(f"held-out log-likelihood {rep.normalized_loglik:.4f} over {rep.num_comparisons} comparisons")
