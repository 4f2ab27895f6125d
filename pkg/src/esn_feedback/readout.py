"""Least-squares affine readout ``y_hat = W^T x + C``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTargetError, UsageError


@dataclass(frozen=True, eq=False)
class MomentStats:
    """First and second moments of (state, target) pairs over a window.

    ``K_xx`` and ``K_xy`` use the 1/N (population) convention.
    """

    x_mean: np.ndarray
    y_mean: float
    K_xx: np.ndarray
    K_xy: np.ndarray
    y_var: float
    N: int


@dataclass(frozen=True, eq=False)
class ReadoutSolution:
    W: np.ndarray
    C: float
    s_min: float
    nmse_train: float
    used_pseudoinverse: bool = False

    def predict(self, states) -> np.ndarray:
        return predict(self, states)


def _as_pairs(states, targets):
    X = np.asarray(states, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != y.size:
        raise UsageError(f"{X.shape[0] if X.ndim else 0} states vs {y.size} targets")
    if y.size < 2:
        raise UsageError("at least two samples are needed")
    return X, y


def accumulate(states, targets) -> MomentStats:
    """Means, covariance ``K_xx``, cross-covariance ``K_xy`` and target variance.

    Two passes (means first, then centered products).
    """
    X, y = _as_pairs(states, targets)
    N = y.size
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    K_xx = Xc.T @ Xc / N
    K_xx = 0.5 * (K_xx + K_xx.T)
    return MomentStats(
        x_mean=x_mean,
        y_mean=y_mean,
        K_xx=K_xx,
        K_xy=Xc.T @ yc / N,
        y_var=float(yc @ yc / N),
        N=N,
    )


def pinv_solve(K_xx, rhs, N):
    """``K_xx^+ rhs`` through one symmetric eigensolve; returns ``(x, used_pinv)``.

    Eigenvalues below ``max(n, N) * eps * lambda_max`` are treated as zero.
    """
    lam, U = np.linalg.eigh(K_xx)
    top = max(float(lam[-1]), 0.0)
    tol = max(K_xx.shape[0], N) * np.finfo(float).eps * top
    keep = lam > tol
    coef = U.T @ rhs
    scale = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    coef = coef * (scale if coef.ndim == 1 else scale[:, None])
    return U @ coef, bool(not np.all(keep))


def solve(stats: MomentStats) -> ReadoutSolution:
    """Optimal ``(W, C)`` from moments; ``s_min = (sigma_y^2 - K_xy^T W) / 2``.

    Raises:
        DegenerateTargetError: if the target variance is zero.
    """
    if not stats.y_var > 0.0:
        raise DegenerateTargetError("target variance is zero; NMSE undefined")
    W, used = pinv_solve(stats.K_xx, stats.K_xy, stats.N)
    C = stats.y_mean - float(W @ stats.x_mean)
    two_s = max(stats.y_var - float(stats.K_xy @ W), 0.0)
    return ReadoutSolution(W=W, C=C, s_min=0.5 * two_s, nmse_train=two_s / stats.y_var, used_pseudoinverse=used)


def fit(states, targets) -> ReadoutSolution:
    """Solve the readout and score it from the actual training residuals.

    Same ``(W, C)`` as :func:`solve`; ``s_min`` is ``mean(residual**2) / 2``,
    which stays accurate when the fit is nearly exact.
    """
    X, y = _as_pairs(states, targets)
    stats = accumulate(X, y)
    sol = solve(stats)
    r = y - (X @ sol.W + sol.C)
    mse = float(r @ r / y.size)
    return ReadoutSolution(
        W=sol.W, C=sol.C, s_min=0.5 * mse, nmse_train=mse / stats.y_var, used_pseudoinverse=sol.used_pseudoinverse
    )


def predict(solution: ReadoutSolution, states) -> np.ndarray:
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != solution.W.size:
        raise UsageError(f"states have {X.shape[1]} nodes, readout expects {solution.W.size}")
    return X @ solution.W + solution.C


def nmse(predictions, targets) -> float:
    """``<(y - y_hat)^2> / sigma_y^2`` with the variance of this window's targets.

    Not clamped: on held-out data it can exceed 1.
    """
    p = np.asarray(predictions, dtype=float).reshape(-1)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if p.shape != y.shape:
        raise UsageError(f"{p.size} predictions vs {y.size} targets")
    var = float(np.var(y))
    if not var > 0.0:
        raise DegenerateTargetError("target variance is zero; NMSE undefined")
    return float(np.mean((y - p) ** 2) / var)
