"""Novel-pair detection by random projections.

A row of the moment matrix is an extreme point of the convex hull of all
rows iff its solid angle is positive: the probability that it has the largest
projection on an isotropic random direction. Rows closer than the tolerance
(same cluster) do not compete with each other.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .exceptions import InsufficientClustersError, ValidationError

DEFAULT_ZETA = 0.02
PROJECTIONS_PER_RANKING = 150
DIRECTION_LAWS = ("gaussian", "sphere")
_BLOCK = 1024


def default_projections(K):
    return PROJECTIONS_PER_RANKING * K


@dataclass(frozen=True)
class NeighborSets:
    J: np.ndarray  # J[w, u] is True iff u is separated from w
    zeta: float
    zero_rows: np.ndarray

    def members(self, w):
        return np.flatnonzero(self.J[w])


@dataclass(frozen=True)
class SolidAngleEstimates:
    q_hat: np.ndarray
    P: int
    direction_law: str
    counts: np.ndarray


@dataclass(frozen=True)
class NovelPairSet:
    I: list
    q_values: list
    rejections: list = field(default_factory=list)

    def __len__(self):
        return len(self.I)


def separation_statistic(E):
    """E_ww - E_wu - E_uw + E_uu for every pair of rows."""
    diag = np.diag(E)
    return diag[:, None] + diag[None, :] - E - E.T


def build_neighbor_sets(E_hat, zeta=DEFAULT_ZETA, zero_rows=None):
    E = getattr(E_hat, "E_hat", E_hat)
    if zero_rows is None:
        zero_rows = getattr(E_hat, "zero_rows", np.zeros(E.shape[0], dtype=bool))
    zero_rows = np.asarray(zero_rows, dtype=bool)
    J = separation_statistic(E) >= zeta / 2
    # unobserved rows are not points of the hull: they compete with nobody,
    # and get every other row as neighbour so they can never be selected
    J[:, zero_rows] = False
    J[zero_rows, :] = True
    np.fill_diagonal(J, False)
    return NeighborSets(J, float(zeta), zero_rows)


def _directions(rng, W, n, law):
    D = rng.standard_normal((W, n))
    if law == "sphere":
        D /= np.linalg.norm(D, axis=0, keepdims=True)
    return D


def _count_block(E, J, live, seed, block, n, law):
    D = _directions(_rng.stream(seed, "projections", block), E.shape[0], n, law)
    proj = E @ D
    wins = np.zeros(E.shape[0], dtype=np.int64)
    for w in live:
        rivals = J[w]
        if rivals.any():
            wins[w] = np.count_nonzero(proj[rivals].max(axis=0) <= proj[w])
        else:
            wins[w] = n
    return wins


def estimate_solid_angles(E_hat, J, P, direction_law="gaussian", seed=0, threads=1):
    """Fraction of P random directions on which each row beats all its neighbours.

    Directions are generated in fixed blocks, each from its own substream of
    ``seed``, so the counts do not depend on ``threads``.
    """
    if P < 1:
        raise ValidationError("need at least one projection")
    if direction_law not in DIRECTION_LAWS:
        raise ValidationError(f"direction law must be one of {DIRECTION_LAWS}")
    E = np.asarray(getattr(E_hat, "E_hat", E_hat), dtype=float)
    sets = J if isinstance(J, NeighborSets) else NeighborSets(np.asarray(J), float("nan"), np.zeros(len(E), bool))
    live = np.flatnonzero(~sets.zero_rows)
    sizes = [min(_BLOCK, P - s) for s in range(0, P, _BLOCK)]
    jobs = [(E, sets.J, live, seed, b, n, direction_law) for b, n in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda a: _count_block(*a), jobs))
    else:
        parts = [_count_block(*a) for a in jobs]
    counts = np.sum(parts, axis=0)
    return SolidAngleEstimates(counts / P, int(P), direction_law, counts)


def oracle_solid_angles(E_exact, P, seed, zeta, zero_rows=None, direction_law="gaussian"):
    """High-P solid angles on exact moments, neighbours at tolerance ``zeta``.

    Pass ``zeta`` = half the known separation gap d.
    """
    sets = build_neighbor_sets(E_exact, zeta, zero_rows)
    return estimate_solid_angles(E_exact, sets, P, direction_law, seed)


def select_novel_pairs(q_hat, J, K):
    """Greedy scan by descending solid angle, ties to the lower row.

    A row is accepted iff it is a neighbour of every row accepted so far.
    """
    if K < 1:
        raise ValidationError("K must be >= 1")
    q = np.asarray(getattr(q_hat, "q_hat", q_hat), dtype=float)
    sets = J if isinstance(J, NeighborSets) else NeighborSets(np.asarray(J), float("nan"), np.zeros(len(q), bool))
    order = np.lexsort((np.arange(len(q)), -q))
    chosen, rejections = [], []
    for w in order:
        w = int(w)
        if sets.zero_rows[w]:
            continue
        clash = [u for u in chosen if not sets.J[u, w]]
        if clash:
            rejections.append({"row": w, "q_hat": float(q[w]), "too_close_to": clash})
            continue
        chosen.append(w)
        if len(chosen) == K:
            return NovelPairSet(chosen, [float(q[u]) for u in chosen], rejections)
    raise InsufficientClustersError(
        f"insufficient distinct extreme clusters: found {len(chosen)} of K={K}", chosen
    )


def detect_novel_pairs(E_hat, K, P=None, zeta=DEFAULT_ZETA, direction_law="gaussian", seed=0, threads=1):
    """Neighbour sets, solid angles and greedy selection in one call."""
    if P is None:
        P = default_projections(K)
    sets = build_neighbor_sets(E_hat, zeta)
    angles = estimate_solid_angles(E_hat, sets, P, direction_law, seed, threads)
    return select_novel_pairs(angles, sets, K), angles, sets


def diagnostics_dict(angles, selected, pair_index=None):
    out = {
        "P": angles.P,
        "direction_law": angles.direction_law,
        "q_hat": [float(x) for x in angles.q_hat],
        "selected": list(selected.I),
        "rejections": selected.rejections,
    }
    if pair_index is not None:
        out["selected_pairs"] = [list(map(int, pair_index.pair(w))) for w in selected.I]
    return out


def write_diagnostics(path, angles, selected, pair_index=None):
    with open(path, "w") as fh:
        json.dump(diagnostics_dict(angles, selected, pair_index), fh, indent=2)
