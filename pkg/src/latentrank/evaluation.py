"""Column-matched Kendall tau error and RMSE."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ValidationError


@dataclass(frozen=True)
class MatchedError:
    permutation: np.ndarray  # permutation[k] = column of sigma_hat matched to sigma column k
    per_column_error: np.ndarray
    mean_error: float


def hungarian_match(cost):
    """Assignment minimising total cost; ``perm[k]`` is the column given to row k."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValidationError("cost matrix must be square")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


def _sigma(x):
    return np.asarray(getattr(x, "sigma", x), dtype=float)


def kendall_tau_error(sigma_true, sigma_hat):
    """l1 distance between matched columns, normalised by W, so each is in [0, 1]."""
    S, T = _sigma(sigma_true), _sigma(sigma_hat)
    if S.shape != T.shape:
        raise ValidationError(f"dimension mismatch: {S.shape} vs {T.shape}")
    W = S.shape[0]
    cost = np.abs(S[:, :, None] - T[:, None, :]).sum(axis=0)
    perm = hungarian_match(cost)
    per_col = cost[np.arange(S.shape[1]), perm] / W
    return MatchedError(perm, per_col, float(per_col.mean()))


def rmse(predictions, truths):
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise ValidationError("rmse needs two equal-length non-empty sequences")
    return float(np.sqrt(np.mean((p - t) ** 2)))


METRICS_HEADER = ["run_id", "M", "N", "K", "Q", "seed", "mean_error", "per_column_errors"]


def write_metrics_csv(path, rows):
    """rows: dicts with the METRICS_HEADER keys; per-column errors joined by ';'."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(METRICS_HEADER)
        for r in rows:
            errs = ";".join(repr(float(e)) for e in r["per_column_errors"])
            out.writerow([r["run_id"], r["M"], r["N"], r["K"], r["Q"], r["seed"], repr(float(r["mean_error"])), errs])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["mean_error"] = float(r["mean_error"])
        r["per_column_errors"] = [float(x) for x in r["per_column_errors"].split(";") if x]
    return rows
