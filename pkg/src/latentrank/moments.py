"""Second-order moments of the comparisons-by-user matrix.

Each user's comparisons are split into two copies X and X', both are row
normalised, and ``E_hat = M * Xt' @ Xt.T`` converges to the exact moment
``E = Bbar Rbar Bbar^T`` with ``Bbar = diag(Ba)^-1 B diag(a)`` and
``Rbar = diag(a)^-1 R diag(a)^-1``.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import ValidationError
from .model import PairIndex, find_novel_pairs

log = logging.getLogger(__name__)

MAX_W = 20_000
# above this many W x M entries the product is done sparse
DENSE_PRODUCT_LIMIT = 50_000_000


@dataclass(frozen=True)
class SplitDataset:
    X: sp.csr_matrix
    X_prime: sp.csr_matrix
    split_rule: str
    excluded_users: int
    users: np.ndarray  # original ids of the retained users

    @property
    def M(self):
        return self.X.shape[1]

    @property
    def counts(self):
        return self.X + self.X_prime


@dataclass(frozen=True)
class CooccurrenceEstimate:
    E_hat: np.ndarray
    M: Optional[int]
    N: Optional[float]
    symmetrized: bool
    zero_rows: np.ndarray
    exact: bool = False
    row_mass: Optional[np.ndarray] = None  # (Ba) for exact moments

    @property
    def W(self):
        return self.E_hat.shape[0]


def split_dataset(dataset, seed=None):
    """Even arrival positions go to X, odd ones to X'.

    ``seed`` is accepted for interface symmetry; the split is deterministic.
    Users with fewer than two comparisons cannot be split and are dropped.
    """
    if dataset.W > MAX_W:
        raise ValidationError(f"W={dataset.W} exceeds the configured cap of {MAX_W}")
    n = dataset.N_m
    keep = np.flatnonzero(n >= 2)
    excluded = dataset.M - len(keep)
    if excluded:
        log.warning("%d user(s) with < 2 comparisons excluded from moment estimation", excluded)
    col_of_user = np.full(dataset.M, -1, dtype=np.int64)
    col_of_user[keep] = np.arange(len(keep))
    users = dataset.user_index
    cols = col_of_user[users]
    position = np.arange(len(dataset.pairs)) - dataset.offsets[users]
    ok = cols >= 0
    even = ok & (position % 2 == 0)
    odd = ok & (position % 2 == 1)
    shape = (dataset.W, len(keep))

    def _counts(mask):
        X = sp.csr_matrix(
            (np.ones(mask.sum(), dtype=np.int64), (dataset.pairs[mask], cols[mask])), shape=shape
        )
        X.sum_duplicates()
        return X

    return SplitDataset(_counts(even), _counts(odd), "even-odd", excluded, keep)


def row_normalize(X):
    """Scale rows to sum to one; returns ``(Xt, zero_rows)``.

    All-zero rows stay zero and are flagged in the boolean mask.
    """
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=float)
        sums = np.asarray(X.sum(axis=1)).ravel()
        zero = sums == 0
        scale = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, sums))
        return sp.diags(scale) @ X, zero
    X = np.asarray(X, dtype=float)
    sums = X.sum(axis=1)
    zero = sums == 0
    return X / np.where(zero, 1.0, sums)[:, None], zero


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def estimate_cooccurrence(Xt, Xt_prime, M=None, symmetrize=True, N=None, zero_rows=None):
    """E_hat = M * Xt' @ Xt.T, optionally symmetrised."""
    if Xt.shape != Xt_prime.shape:
        raise ValidationError(f"shape mismatch: {Xt.shape} vs {Xt_prime.shape}")
    if M is None:
        M = Xt.shape[1]
    W, cols = Xt.shape
    if W * cols <= DENSE_PRODUCT_LIMIT:
        E = M * (_dense(Xt_prime) @ _dense(Xt).T)
    else:
        E = M * _dense(sp.csr_matrix(Xt_prime) @ sp.csr_matrix(Xt).T)
    if symmetrize:
        E = 0.5 * (E + E.T)
    if zero_rows is None:
        zero_rows = (np.asarray(abs(Xt).sum(axis=1)).ravel() == 0) | (
            np.asarray(abs(Xt_prime).sum(axis=1)).ravel() == 0
        )
    return CooccurrenceEstimate(np.ascontiguousarray(E), int(M), N, bool(symmetrize), np.asarray(zero_rows))


def moments_from_dataset(dataset, symmetrize=True):
    """Split, normalise and form E_hat. Returns ``(split, Xt, Xt_prime, estimate)``."""
    split = split_dataset(dataset)
    Xt, z1 = row_normalize(split.X)
    Xtp, z2 = row_normalize(split.X_prime)
    N = float(dataset.N_m[split.users].mean()) if split.M else None
    est = estimate_cooccurrence(Xt, Xtp, split.M, symmetrize, N=N, zero_rows=z1 | z2)
    return split, Xt, Xtp, est


def _support_and_mass(model):
    a = np.asarray(model.prior.a, dtype=float)
    if np.any(a <= 0):
        raise ValidationError("every ranking needs positive prior mean weight")
    mass = model.B @ a
    return a, mass, mass > 0


def bar_matrices(model, strict=True):
    """(Bbar, Rbar, Ba, support) for a ground-truth model.

    Rows of Bbar outside the support (Ba = 0) are left at zero.
    """
    a, mass, support = _support_and_mass(model)
    if strict and not support.all():
        w = int(np.flatnonzero(~support)[0])
        i, j = PairIndex(model.Q).pair(w)
        raise ValidationError(
            f"pair ({i},{j}) (row {w}) has zero probability: no ranking weighted by a prefers {i} over {j}"
        )
    Bbar = np.zeros_like(model.B)
    Bbar[support] = model.B[support] * a / mass[support, None]
    R = np.asarray(model.prior.R, dtype=float)
    Rbar = R / np.outer(a, a)
    return Bbar, Rbar, mass, support


def exact_E(model, strict=True):
    """Closed-form limit of E_hat.

    With ``strict`` any row with zero probability is an error; otherwise such
    rows are returned as zero rows and flagged like unobserved rows of X.
    """
    Bbar, Rbar, mass, support = bar_matrices(model, strict)
    E = Bbar @ Rbar @ Bbar.T
    E = 0.5 * (E + E.T)
    return CooccurrenceEstimate(E, None, None, True, ~support, exact=True, row_mass=mass)


@dataclass(frozen=True)
class SeparationConstants:
    eta: float
    b: float
    lambda_min: float
    lambda_max: float
    d: float
    d2: float
    clusters: list
    non_novel: np.ndarray


def separation_constants(model, strict=True):
    """Geometry constants of the exact moment matrix.

    eta = min (Ba), b = max of Bbar over non-novel rows, lambda_min/max the
    extreme eigenvalues of Rbar, d = (1-b)^2 lambda_min^2 / lambda_max and
    d2 = (1-b) lambda_min.
    """
    Bbar, Rbar, mass, support = bar_matrices(model, strict)
    novel = find_novel_pairs(model.sigma)
    # rows without mass are not rows of E at all
    non_novel = np.array([w for w in novel.non_novel if support[w]], dtype=np.int64)
    b = float(Bbar[non_novel].max()) if len(non_novel) else 0.0
    ev = np.linalg.eigvalsh(0.5 * (Rbar + Rbar.T))
    lmin, lmax = float(ev[0]), float(ev[-1])
    d = (1 - b) ** 2 * lmin**2 / lmax
    d2 = (1 - b) * lmin
    eta = float(mass[support].min()) if not strict else float(mass.min())
    return SeparationConstants(eta, b, lmin, lmax, d, d2, novel.clusters, non_novel)


# ----------------------------------------------------------------------------
# binary dump
# ----------------------------------------------------------------------------

_MAGIC = b"RMXE"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def write_E(path, estimate):
    E = np.ascontiguousarray(estimate.E_hat, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, E.shape[0], estimate.M or 0))
        fh.write(E.tobytes(order="C"))


def read_E(path):
    """Returns ``(E_hat, M)`` from a binary dump."""
    with open(path, "rb") as fh:
        magic, version, W, M = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != _VERSION:
            raise ValidationError(f"{path}: not an RMXE v{_VERSION} file")
        E = np.frombuffer(fh.read(8 * W * W), dtype="<f8")
    if E.size != W * W:
        raise ValidationError(f"{path}: truncated payload")
    return E.reshape(W, W).astype(float), int(M)
