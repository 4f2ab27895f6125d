"""Certificates that feedback can still lower the training cost.

With ``X`` the centered, ``1/sqrt(N)``-scaled state matrix and ``D_i`` the
same transform applied to ``dx/dV_i``,

    M_par = sum_i D_i (I - Pi_x) D_i^T,    Pi_x = X^T (X X^T)^+ X.

A zero trace means no direction of ``V`` moves the state subspace, so the
feedback gradient vanishes for every target. The N x N projector is never
formed: ``D_i Pi_x D_i^T = (D_i X^T) K_xx^+ (X D_i^T)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UsageError
from .feedback import gradient
from .readout import ReadoutSolution, accumulate, pinv_solve
from .reservoir import Trajectory

RANK_TOL = 1e-10
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class GradientCertificate:
    grad_norm: float
    trace_m_par: float
    m_par_rank: int
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def centered_state_matrix(states) -> np.ndarray:
    """``X[i, k] = (x_{k,i} - mean_i) / sqrt(N)``; shape ``(n, N)``."""
    S = np.asarray(states, dtype=float)
    if S.ndim != 2 or S.shape[0] < 2:
        raise UsageError("need an (N, n) state array with N >= 2")
    return ((S - S.mean(axis=0)) / np.sqrt(S.shape[0])).T


def centered_sensitivities(sens) -> np.ndarray:
    """``D[i]`` is the centered, scaled ``dX/dV_i``; shape ``(n, n, N)``."""
    D = np.asarray(sens, dtype=float)
    if D.ndim != 3:
        raise UsageError("sensitivities must have shape (N, n, n)")
    N = D.shape[0]
    Dc = (D - D.mean(axis=0)) / np.sqrt(N)
    return np.transpose(Dc, (2, 1, 0))


def m_par_matrix(trajectory: Trajectory) -> np.ndarray:
    if trajectory.sensitivities is None:
        raise UsageError("trajectory has no sensitivities")
    X = centered_state_matrix(trajectory.train_states)
    D = centered_sensitivities(trajectory.sensitivities)
    N = X.shape[1]
    K_xx = X @ X.T
    m = np.zeros_like(K_xx)
    for Di in D:
        cross = X @ Di.T  # K_xy with y replaced by sensitivity rows
        proj, _ = pinv_solve(K_xx, cross, N)
        m += Di @ Di.T - cross.T @ proj
    return 0.5 * (m + m.T)


def certificate(trajectory: Trajectory, solution: ReadoutSolution, targets) -> GradientCertificate:
    """Gradient norm and ``Tr(M_par)`` for one trained reservoir."""
    m = m_par_matrix(trajectory)
    energy = float(np.sum(centered_sensitivities(trajectory.sensitivities) ** 2))
    trace = float(np.trace(m))
    eig = np.linalg.eigvalsh(m)
    top = float(eig[-1])
    rank = int(np.count_nonzero(eig > RANK_TOL * top)) if top > 0 else 0
    g = gradient(trajectory, solution, targets)
    return GradientCertificate(
        grad_norm=float(np.linalg.norm(g)),
        trace_m_par=trace,
        m_par_rank=rank,
        degenerate=bool(energy == 0.0 or trace <= DEGENERATE_TOL * energy),
    )


def explicit_projector(X) -> np.ndarray:
    """``Pi_x = X^+ X`` built from the SVD of ``X`` (small N only)."""
    return np.linalg.pinv(np.asarray(X, dtype=float)) @ X


def m_par_trace_explicit(trajectory: Trajectory) -> float:
    """``Tr(M_par)`` with the N x N projector formed explicitly."""
    X = centered_state_matrix(trajectory.train_states)
    P = np.eye(X.shape[1]) - explicit_projector(X)
    return float(sum(np.trace(Di @ P @ Di.T) for Di in centered_sensitivities(trajectory.sensitivities)))


def moments_consistent(trajectory: Trajectory, targets) -> float:
    """Largest deviation between ``X X^T`` and the readout's ``K_xx``."""
    X = centered_state_matrix(trajectory.train_states)
    stats = accumulate(trajectory.train_states, targets)
    return float(np.max(np.abs(X @ X.T - stats.K_xx)))
