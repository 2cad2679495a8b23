"""Soft-margin RBF support vector machine trained by sequential minimal optimization.

The dual ``min 1/2 a'Qa - e'a  s.t.  0 <= a <= C, y'a = 0`` with
``Q_ij = y_i y_j k(s_i, s_j)`` is solved two coordinates at a time, picking
the maximal-violating index first and its partner by second-order gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..types import NumericError, ScoreDataset, validate_dataset

DEFAULT_TOL = 1e-3
MAX_PAIR_UPDATES = 1_000_000
_TAU = 1e-12


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    gap = np.inf
    while it < max_iter:
        # working set selection
        i = -1
        gmax = -np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v > gmax:
                    gmax = v
                    i = t
        j = -1
        gmin = np.inf
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * grad[t]
                if v < gmin:
                    gmin = v
                b = gmax - v
                if i >= 0 and b > 0:
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0:
                        a = _TAU
                    obj = -(b * b) / a
                    if obj < best:
                        best = obj
                        j = t
        gap = gmax - gmin
        if gap < tol or i < 0 or j < 0:
            break
        it += 1
        # two-variable subproblem
        ai_old = alpha[i]
        aj_old = alpha[j]
        qii = K[i, i]
        qjj = K[j, j]
        qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            quad = qii + qjj + 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = qii + qjj - 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):  # K symmetric: read rows, not columns
            grad[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)
    return alpha, grad, it, gap


def _bias(alpha, grad, y, C) -> float:
    # rho as in the standard SMO bias rule; decision is sum a_j y_j k(., s_j) - rho
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        up = ((y > 0) & (alpha >= C)) | ((y < 0) & (alpha <= 0))
        low = ((y > 0) & (alpha <= 0)) | ((y < 0) & (alpha >= C))
        ub = yg[low].min() if low.any() else np.inf
        lb = yg[up].max() if up.any() else -np.inf
        if not np.isfinite(ub):
            ub = lb
        if not np.isfinite(lb):
            lb = ub
        rho = float((ub + lb) / 2.0)
    return -rho


@dataclass(frozen=True)
class KernelModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_j * y_j
    bias: float
    gamma: float
    C: float
    n_iter: int = 0
    kkt_gap: float = 0.0
    objective: float = 0.0

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.dual_coef.size == 0:
            return np.full(X.shape[0], self.bias)
        out = np.empty(X.shape[0])
        step = 4096
        for start in range(0, X.shape[0], step):
            Kx = rbf_kernel(X[start:start + step], self.support_vectors, self.gamma)
            out[start:start + step] = Kx @ self.dual_coef + self.bias
        return out

    score = decision

    def to_json(self) -> dict:
        return {
            "rule": "svm_rbf", "C": self.C, "gamma": self.gamma, "bias": self.bias,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "n_iter": self.n_iter, "kkt_gap": self.kkt_gap, "objective": self.objective,
        }

    @classmethod
    def from_json(cls, obj) -> "KernelModel":
        sv = np.asarray(obj["support_vectors"], dtype=np.float64)
        return cls(sv.reshape(len(sv), -1), np.asarray(obj["dual_coef"], dtype=np.float64),
                   float(obj["bias"]), float(obj["gamma"]), float(obj["C"]),
                   int(obj.get("n_iter", 0)), float(obj.get("kkt_gap", 0.0)),
                   float(obj.get("objective", 0.0)))


def dual_objective(alpha, K, y) -> float:
    """Value of ``1/2 a'Qa - e'a`` (the minimized dual)."""
    ay = alpha * y
    return float(0.5 * ay @ K @ ay - alpha.sum())


def solve_dual(K: np.ndarray, y: np.ndarray, C: float, tol: float = DEFAULT_TOL,
               max_iter: int = MAX_PAIR_UPDATES):
    """Run SMO on a precomputed kernel matrix; returns ``(alpha, bias, n_iter, gap)``."""
    y = np.asarray(y, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    alpha, grad, it, gap = _smo(K, y, float(C), float(tol), int(max_iter))
    if gap >= tol and it >= max_iter:
        raise NumericError(f"SMO did not converge after {it} pair updates (KKT gap {gap:.3g})")
    return alpha, _bias(alpha, grad, y, C), int(it), float(gap)


def train_svm_rbf(dataset: ScoreDataset, C: float, gamma: float, tol: float = DEFAULT_TOL,
                  kernel: np.ndarray | None = None) -> KernelModel:
    """Train on a dataset (genuine = +1); ``kernel`` may carry a precomputed Gram matrix."""
    validate_dataset(dataset)
    X = dataset.scores
    y = np.where(dataset.genuine, 1.0, -1.0)
    K = rbf_kernel(X, X, gamma) if kernel is None else kernel
    alpha, b, it, gap = solve_dual(K, y, C, tol)
    sv = alpha > 0
    return KernelModel(X[sv].copy(), (alpha * y)[sv], b, float(gamma), float(C), it, gap,
                       dual_objective(alpha, K, y))
