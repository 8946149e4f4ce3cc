"""Simplex-constrained regression of every row onto the novel-pair rows."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import ValidationError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4
MAX_ITER = 10_000


def project_simplex(V):
    """Euclidean projection of each row of V onto the probability simplex."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n, K = V.shape
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ks = np.arange(1, K + 1)
    cond = U - css / ks > 0
    rho = K - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(n), rho] / (rho + 1)
    out = np.maximum(V - tau[:, None], 0.0)
    # clean up rounding so every row sums to one
    out /= out.sum(axis=1, keepdims=True)
    return out


@dataclass(frozen=True)
class SimplexRegressionProblem:
    """min_b M (x - bY)(x' - bY')^T over the simplex, to precision epsilon."""

    x: np.ndarray
    x_prime: np.ndarray
    Y: np.ndarray
    Y_prime: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    M: Optional[float] = None

    def __post_init__(self):
        x, xp = np.ravel(self.x).astype(float), np.ravel(self.x_prime).astype(float)
        Y, Yp = np.atleast_2d(self.Y).astype(float), np.atleast_2d(self.Y_prime).astype(float)
        if x.shape != xp.shape or Y.shape != Yp.shape or Y.shape[1] != x.shape[0]:
            raise ValidationError("regression problem shapes disagree")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        for name, v in (("x", x), ("x_prime", xp), ("Y", Y), ("Y_prime", Yp)):
            object.__setattr__(self, name, v)
        if self.M is None:
            object.__setattr__(self, "M", float(x.shape[0]))

    @property
    def K(self):
        return self.Y.shape[0]

    def quadratic(self):
        """(H, g, c) with objective b H b^T - 2 g b^T + c."""
        M = self.M
        H = M * 0.5 * (self.Y @ self.Y_prime.T + self.Y_prime @ self.Y.T)
        g = M * 0.5 * (self.Y @ self.x_prime + self.Y_prime @ self.x)
        c = M * float(self.x @ self.x_prime)
        return H, g, c

    def objective(self, b):
        b = np.asarray(b, dtype=float)
        return self.M * float((self.x - b @ self.Y) @ (self.x_prime - b @ self.Y_prime))


@dataclass(frozen=True)
class SimplexFit:
    b: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _row_objective(B, H, G):
    return np.einsum("ij,ij->i", B @ H, B) - 2.0 * np.einsum("ij,ij->i", G, B)


def solve_simplex_qp(H, G, epsilon=DEFAULT_EPSILON, max_iter=MAX_ITER, record=False):
    """Projected gradient for min b H b^T - 2 g b^T on the simplex, row-batched.

    H (K x K) is shared, G holds one linear term per row. Starts from the
    uniform vector with step 1/L, L = 2 ||H||_F, and stops a row once its
    objective drops by less than ``epsilon`` in a step.

    Returns ``(B, objective, iterations, converged, history)``; history holds
    the objective trajectory of every row when ``record`` is set.
    """
    H = 0.5 * (H + H.T)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, K = G.shape
    B = np.full((n, K), 1.0 / K)
    obj = _row_objective(B, H, G)
    iters = np.zeros(n, dtype=np.int64)
    history = [obj.copy()] if record else []
    L = 2.0 * np.linalg.norm(H, "fro")
    active = np.ones(n, dtype=bool) if (K > 1 and L > 0) else np.zeros(n, dtype=bool)
    step = 1.0 / L if L > 0 else 0.0
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        cur = B[idx]
        grad = 2.0 * (cur @ H - G[idx])
        new = project_simplex(cur - step * grad)
        new_obj = _row_objective(new, H, G[idx])
        decrease = obj[idx] - new_obj
        better = new_obj <= obj[idx]
        B[idx[better]] = new[better]
        obj[idx[better]] = new_obj[better]
        iters[idx] += 1
        active[idx[decrease < epsilon]] = False
        if record:
            history.append(obj.copy())
    return B, obj, iters, ~active, history


def simplex_regress(problem, max_iter=MAX_ITER, record=False):
    H, g, c = problem.quadratic()
    B, obj, iters, conv, hist = solve_simplex_qp(H, g[None, :], problem.epsilon, max_iter, record)
    if not conv[0]:
        log.warning("simplex regression hit the iteration cap (%d)", max_iter)
    return SimplexFit(B[0], float(obj[0] + c), int(iters[0]), bool(conv[0]),
                      [float(h[0] + c) for h in hist])


@dataclass(frozen=True)
class BEstimate:
    B_hat: np.ndarray  # column normalised
    B_scaled: np.ndarray  # row scaled, before column normalisation
    coefficients: np.ndarray  # simplex regression outputs
    objectives: np.ndarray
    capped_rows: int


def _finish(coef, obj, conv, scale, zero_rows):
    coef = coef.copy()
    coef[zero_rows] = 0.0
    scaled = scale[:, None] * coef
    sums = scaled.sum(axis=0)
    bad = np.flatnonzero(sums <= 0)
    if len(bad):
        raise ValidationError(f"column {int(bad[0])} of B_hat sums to zero: its novel pair was never observed")
    capped = int(np.count_nonzero(~conv & ~zero_rows))
    if capped:
        log.warning("%d row regression(s) hit the iteration cap", capped)
    return BEstimate(scaled / sums, scaled, coef, obj, capped)


def estimate_B(I, Xt, Xt_prime, X, epsilon=DEFAULT_EPSILON, zero_rows=None, max_iter=MAX_ITER):
    """Regress every row of Xt onto the novel rows, row-scale, column-normalise."""
    I = list(getattr(I, "I", I))
    W, M = Xt.shape
    Xt = sp.csr_matrix(Xt) if sp.issparse(Xt) else np.asarray(Xt)
    Xt_prime = sp.csr_matrix(Xt_prime) if sp.issparse(Xt_prime) else np.asarray(Xt_prime)
    dense = lambda A: A.toarray() if sp.issparse(A) else np.asarray(A)
    Y, Yp = dense(Xt[I]), dense(Xt_prime[I])
    H = M * 0.5 * (Y @ Yp.T + Yp @ Y.T)
    G = M * 0.5 * (np.asarray(Xt_prime @ Y.T) + np.asarray(Xt @ Yp.T))
    if sp.issparse(Xt):
        c = M * np.asarray(Xt.multiply(Xt_prime).sum(axis=1)).ravel()
    else:
        c = M * np.einsum("ij,ij->i", Xt, Xt_prime)
    if zero_rows is None:
        zero_rows = np.zeros(W, dtype=bool)
    coef, obj, _, conv, _ = solve_simplex_qp(H, G, epsilon, max_iter)
    scale = np.asarray(X.sum(axis=1)).ravel() / M
    return _finish(coef, obj + c, conv, scale, np.asarray(zero_rows, dtype=bool))


def estimate_B_from_moments(I, E, row_mass, epsilon=DEFAULT_EPSILON, zero_rows=None, max_iter=MAX_ITER):
    """Population version: regress rows of E onto E's novel rows, scale by Ba."""
    I = list(getattr(I, "I", I))
    E = np.asarray(E, dtype=float)
    if zero_rows is None:
        zero_rows = np.zeros(E.shape[0], dtype=bool)
    H = E[np.ix_(I, I)]
    G = E[:, I]
    coef, obj, _, conv, _ = solve_simplex_qp(H, G, epsilon, max_iter)
    obj = obj + np.diag(E)
    return _finish(coef, obj, conv, np.asarray(row_mass, dtype=float), np.asarray(zero_rows, dtype=bool))
