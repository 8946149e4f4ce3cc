"""End-to-end ranking recovery and the sample-complexity calculator.

Pipeline: split -> normalise -> moments -> novel-pair detection ->
simplex regression -> rounding to a binary ranking matrix.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import moments as _moments
from .detection import (
    DEFAULT_ZETA,
    DIRECTION_LAWS,
    NovelPairSet,
    build_neighbor_sets,
    default_projections,
    estimate_solid_angles,
    select_novel_pairs,
)
from .exceptions import NotSeparableError, RecoveryError, ValidationError
from .model import PairIndex, RankingMatrix, find_novel_pairs
from .regression import DEFAULT_EPSILON, estimate_B, estimate_B_from_moments

log = logging.getLogger(__name__)


def _q_from_w(W):
    Q = int(round((1 + math.sqrt(1 + 4 * W)) / 2))
    if Q * (Q - 1) != W:
        raise ValidationError(f"{W} rows is not Q(Q-1) for any Q")
    return Q


def soft_rankings(B_hat):
    """Ratio B[(i,j),k] / (B[(i,j),k] + B[(j,i),k]), 0/0 read as 0.5.

    Returns ``(ratio, tie_mask)`` where ``tie_mask`` marks entries exactly 0.5.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    if np.any(B_hat < 0):
        raise ValidationError("B_hat has negative entries")
    idx = PairIndex(_q_from_w(B_hat.shape[0]))
    total = B_hat + B_hat[idx.flips]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, B_hat / np.where(total > 0, total, 1.0), 0.5)
    return ratio, ratio == 0.5


def postprocess(B_hat):
    """Round the soft ranking ratios; exact ties go to (i, j) iff i < j."""
    ratio, ties = soft_rankings(B_hat)
    idx = PairIndex(_q_from_w(ratio.shape[0]))
    lexical = (idx.pairs[:, 0] < idx.pairs[:, 1])[:, None]
    sigma = np.where(ties, lexical, ratio > 0.5).astype(np.int8)
    if ties.any():
        log.warning("%d tied entries rounded by the lexicographic rule", int(ties.sum()) // 2)
    return RankingMatrix(sigma, idx.Q)


@dataclass
class LearnParams:
    P: Optional[int] = None  # 150 K when unset
    zeta: float = DEFAULT_ZETA
    epsilon: float = DEFAULT_EPSILON
    direction_law: str = "gaussian"
    seed: int = 0
    threads: int = 1

    def resolved(self, K):
        p = LearnParams(**asdict(self))
        if p.P is None:
            p.P = default_projections(K)
        if p.direction_law not in DIRECTION_LAWS:
            raise ValidationError(f"direction law must be one of {DIRECTION_LAWS}")
        return p


@dataclass(frozen=True)
class ModelEstimate:
    B_hat: np.ndarray
    sigma_hat: RankingMatrix
    novel_pairs: NovelPairSet
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.sigma_hat.K

    @property
    def Q(self):
        return self.sigma_hat.Q


class _Stages:
    def __init__(self, diagnostics):
        self.diag = diagnostics
        self.diag.setdefault("timings", {})

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            self.diag["failed_stage"] = name
            raise RecoveryError(f"{name}: {exc}", self.diag) from exc
        finally:
            self.diag["timings"][name] = time.perf_counter() - t0


def _detect_and_finish(stages, estimate, K, params, regress):
    diag = stages.diag
    sets = stages.run("neighbor_sets", build_neighbor_sets, estimate, params.zeta)
    angles = stages.run(
        "solid_angles", estimate_solid_angles, estimate, sets, params.P,
        params.direction_law, params.seed, params.threads,
    )
    selected = stages.run("select", select_novel_pairs, angles, sets, K)
    diag["q_hat"] = angles.q_hat.tolist()
    diag["rejections"] = len(selected.rejections)
    Best = stages.run("regression", regress, selected)
    diag["solver_capped_rows"] = Best.capped_rows
    sigma = stages.run("postprocess", postprocess, Best.B_hat)
    diag["tie_rounds"] = int(soft_rankings(Best.B_hat)[1].sum()) // 2
    diag["B_scaled"] = Best.B_scaled
    return ModelEstimate(Best.B_hat, sigma, selected, diag)


def learn_rankings(dataset, K, params=None, **overrides):
    """Recover K rankings from a ComparisonDataset.

    ``params`` is a LearnParams; keyword overrides replace single fields.
    Stage failures raise RecoveryError carrying the partial diagnostics.
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    if dataset.M < 1 or len(dataset.pairs) == 0:
        raise ValidationError("dataset is empty")
    params = (params or LearnParams())
    if overrides:
        params = LearnParams(**{**asdict(params), **overrides})
    params = params.resolved(K)
    diag = {"params": asdict(params), "K": K, "Q": dataset.Q, "M": dataset.M}
    stages = _Stages(diag)
    t0 = time.perf_counter()
    split = stages.run("split", _moments.split_dataset, dataset)
    Xt, z1 = stages.run("normalize", _moments.row_normalize, split.X)
    Xtp, z2 = _moments.row_normalize(split.X_prime)
    zero = z1 | z2
    est = stages.run("cooccurrence", _moments.estimate_cooccurrence, Xt, Xtp, split.M, True, None, zero)
    if not np.any(np.diag(est.E_hat)):
        # happens when no user ever repeats a pair, e.g. comparisons derived
        # from star ratings: the neighbour test then has nothing to work with
        log.warning("no pair repeats within any user; the diagonal of E_hat is zero and detection will likely fail")
    diag["excluded_users"] = split.excluded_users
    diag["zero_rows"] = int(zero.sum())
    counts = split.counts

    def regress(selected):
        return estimate_B(selected, Xt, Xtp, counts, params.epsilon, zero)

    out = _detect_and_finish(stages, est, K, params, regress)
    diag["timings"]["total"] = time.perf_counter() - t0
    return out


def learn_from_moments(estimate, K, params=None, **overrides):
    """Same pipeline driven by exact (population) moments.

    ``estimate`` must carry ``row_mass`` (the row marginals Ba), as returned
    by ``moments.exact_E``; regression targets are rows of E itself.
    """
    if estimate.row_mass is None:
        raise ValidationError("population moments need row_mass")
    params = (params or LearnParams())
    if overrides:
        params = LearnParams(**{**asdict(params), **overrides})
    params = params.resolved(K)
    diag = {"params": asdict(params), "K": K, "exact_moments": True}
    stages = _Stages(diag)

    def regress(selected):
        return estimate_B_from_moments(
            selected, estimate.E_hat, estimate.row_mass, params.epsilon, estimate.zero_rows
        )

    return _detect_and_finish(stages, estimate, K, params, regress)


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------


def estimate_to_dict(est, extra=None):
    idx = PairIndex(est.Q)
    diag = {k: v for k, v in est.diagnostics.items() if k not in ("B_scaled", "q_hat", "timings")}
    out = {
        "format": "latentrank-estimate-v1",
        "Q": est.Q,
        "K": est.K,
        "B_hat": [[float(x) for x in row] for row in est.B_hat],
        "sigma_hat": est.sigma_hat.sigma.astype(int).tolist(),
        "novel_pairs": [list(map(int, idx.pair(w))) for w in est.novel_pairs.I],
        "novel_rows": list(map(int, est.novel_pairs.I)),
        "novel_q_hat": list(est.novel_pairs.q_values),
        "diagnostics": diag,
    }
    if extra:
        out.update(extra)
    return out


def write_estimate(path, est, extra=None):
    with open(path, "w") as fh:
        json.dump(estimate_to_dict(est, extra), fh, indent=1, sort_keys=True)


def read_estimate(path):
    with open(path) as fh:
        doc = json.load(fh)
    Q = int(doc["Q"])
    sigma = RankingMatrix(np.asarray(doc["sigma_hat"]), Q)
    I = NovelPairSet(list(doc["novel_rows"]), list(doc.get("novel_q_hat", [])))
    return ModelEstimate(np.asarray(doc["B_hat"], dtype=float), sigma, I, doc.get("diagnostics", {}))


# ----------------------------------------------------------------------------
# complexity
# ----------------------------------------------------------------------------


def runtime_cost(M, N, K, Q):
    """Operation count of the cost model M N K + Q^2 K^3."""
    return M * N * K + Q**2 * K**3


@dataclass(frozen=True)
class ComplexityReport:
    M_bound: float
    P_bound: float
    eta: float
    b: float
    lambda_min: float
    lambda_max: float
    d: float
    d2: float
    rho: float
    q_wedge: float
    q_wedge_stderr: float
    direction_law: str
    delta: float
    N: int
    W: int
    K: int

    def to_dict(self):
        return asdict(self)


def vertex_solid_angles(model, P=1_000_000, seed=0):
    """Monte Carlo solid angle of each extreme point of the rows of E.

    Only the K vertices matter (every other row is a convex combination), and
    the projections of the vertices on a standard Gaussian direction are
    jointly Gaussian with covariance V V^T, so K-dimensional draws suffice.
    The argmax, hence the estimate, is the same for any isotropic law.
    Returns ``(q, stderr)`` per ranking.
    """
    from . import _rng

    est = _moments.exact_E(model, strict=False)
    novel = find_novel_pairs(model.sigma)
    V = est.E_hat[[int(c[0]) for c in novel.clusters]]
    gram = V @ V.T
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    root = vecs * np.sqrt(np.clip(vals, 0, None))
    rng = _rng.stream(seed, "solid-angle-oracle")
    K = model.K
    counts = np.zeros(K, dtype=np.int64)
    for s in range(0, P, 200_000):
        n = min(200_000, P - s)
        z = rng.standard_normal((n, K)) @ root.T
        counts += np.bincount(np.argmax(z, axis=1), minlength=K)
    q = counts / P
    return q, np.sqrt(q * (1 - q) / P)


def rho_isotropic(d, d2, q_wedge, W):
    return min(d / 8, math.pi * d2 * q_wedge / (4 * W**1.5))


def rho_gaussian(d, d2, q_wedge, W, K):
    return min(d / 8, math.sqrt(math.pi) * d2 * q_wedge / (4 * K * math.sqrt(W * math.log(2 * W / q_wedge))))


def sample_bounds(rho, eta, lambda_min, q_wedge, W, N, delta):
    """(M_bound, P_bound) for the given constants."""
    L = math.log(3 * W / delta)
    M_bound = max(40 * L / (N * rho**2 * eta**4), 320 * math.sqrt(W) * L / (N * eta**6 * lambda_min))
    P_bound = 16 * L / q_wedge**2
    return M_bound, P_bound


def theory_bounds(model, delta, N, direction_law="gaussian", P_oracle=1_000_000, seed=0, q_wedge=None):
    """Sufficient numbers of users and projections for failure probability delta.

    ``q_wedge`` may be supplied to skip the Monte Carlo estimate.
    """
    if not 0 < delta < 1:
        raise ValidationError("delta must be in (0, 1)")
    if direction_law not in DIRECTION_LAWS:
        raise ValidationError(f"direction law must be one of {DIRECTION_LAWS}")
    if not find_novel_pairs(model.sigma).separable:
        raise NotSeparableError("ranking matrix is not separable")
    R = np.asarray(model.prior.R, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (R + R.T))
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise ValidationError("prior correlation matrix R is rank deficient")
    # zero-mass rows never occur in data, so constants run over the supported rows
    c = _moments.separation_constants(model, strict=False)
    if q_wedge is None:
        q, se = vertex_solid_angles(model, P_oracle, seed)
        k = int(np.argmin(q))
        q_wedge, q_se = float(q[k]), float(se[k])
    else:
        q_wedge, q_se = float(q_wedge), 0.0
    if q_wedge <= 0:
        raise ValidationError("estimated minimum solid angle is zero; raise P_oracle")
    W, K = model.W, model.K
    if direction_law == "gaussian":
        rho = rho_gaussian(c.d, c.d2, q_wedge, W, K)
    else:
        rho = rho_isotropic(c.d, c.d2, q_wedge, W)
    M_bound, P_bound = sample_bounds(rho, c.eta, c.lambda_min, q_wedge, W, N, delta)
    return ComplexityReport(
        M_bound, P_bound, c.eta, c.b, c.lambda_min, c.lambda_max, c.d, c.d2, rho,
        q_wedge, q_se, direction_law, float(delta), int(N), W, K,
    )


def runtime_profile(sizes, seconds):
    """Log-log least-squares slope of run time against a size parameter.

    Returns ``(slope, r_squared)``.
    """
    sizes = np.asarray(sizes, dtype=float)
    seconds = np.asarray(seconds, dtype=float)
    if len(sizes) < 3 or len(sizes) != len(seconds):
        raise ValidationError("need at least 3 runs of matching sizes and times")
    x, y = np.log(sizes), np.log(seconds)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)
