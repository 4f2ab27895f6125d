"""Batch gradient descent on the feedback gain ``V``.

Every accepted iterate keeps ``Abar = A + B V^T`` strictly inside the
convergent region ``sigma_max(Abar) < a``. A step that leaves the region is
pulled back along the right-singular vectors of the offending singular
values, so the part of the step tangent to the constraint surface survives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import readout
from .errors import NumericOverflowError, ProjectionSingularError, UsageError
from .reservoir import EsnParams, Trajectory, Windows, run, sensitivities, spectral_norm

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12
MAX_STEP_HALVINGS = 10


@dataclass(frozen=True)
class GdConfig:
    eta: float = 25.0
    steps: int = 100
    eps_a: float = 1e-5
    keep_best: bool = True
    init: str = "zero"  # or "ansatz"

    def __post_init__(self):
        if not self.eta > 0 or self.steps < 0 or not self.eps_a > 0:
            raise UsageError(f"invalid gradient-descent config {self}")
        if self.init not in ("zero", "ansatz"):
            raise UsageError(f"unknown init {self.init!r}")


@dataclass(frozen=True, eq=False)
class GdRecord:
    s_min: float
    grad_norm: float
    projected: bool
    sigma_max: float
    v: np.ndarray = field(repr=False)


@dataclass(eq=False)
class GdHistory:
    """Per-iterate records; ``records[0]`` is the starting point."""

    records: List[GdRecord] = field(default_factory=list)
    halvings: int = 0

    @property
    def s_min(self) -> np.ndarray:
        return np.array([r.s_min for r in self.records])

    @property
    def sigma_max(self) -> np.ndarray:
        return np.array([r.sigma_max for r in self.records])

    def tail(self, k: int = 5) -> List[dict]:
        return [
            {"s_min": r.s_min, "grad_norm": r.grad_norm, "projected": r.projected, "sigma_max": r.sigma_max}
            for r in self.records[-k:]
        ]


def _train_targets(trajectory: Trajectory, targets) -> np.ndarray:
    y = np.asarray(targets, dtype=float).reshape(-1)
    w = trajectory.windows
    if y.size == w.train:
        return y
    if y.size < w.warmup + w.train:
        raise UsageError(f"{y.size} targets do not cover the training window")
    return y[w.train_slice]


def gradient(trajectory: Trajectory, solution: readout.ReadoutSolution, targets) -> np.ndarray:
    """``dS/dV_j = (1/N) sum_k (W^T dx_k/dV_j) (W^T x_k + C - y_k)`` at fixed ``(W, C)``.

    ``targets`` may be the full aligned sequence or just the training window.
    """
    D = trajectory.sensitivities
    if D is None:
        raise UsageError("trajectory has no sensitivities; call reservoir.sensitivities first")
    y = _train_targets(trajectory, targets)
    r = trajectory.train_states @ solution.W + solution.C - y
    # (W^T D_k)_j, weighted by the residual
    return np.einsum("kij,i,k->j", D, solution.W, r) / y.size


def _project(params: EsnParams, v, delta_v, eps_a: float, max_refine: int = 30) -> Tuple[np.ndarray, List[np.ndarray]]:
    a2 = params.a ** 2
    target = a2 - eps_a
    abar = params.feedback_matrix(v)
    step = np.array(delta_v, dtype=float)
    if not np.all(np.isfinite(step)):
        raise UsageError("non-finite feedback step")
    applied: List[np.ndarray] = []
    k = 0
    for it in range(max_refine + 1):
        cand = params.feedback_matrix(v + step)
        _, s, vt = np.linalg.svd(cand)
        lam2 = s ** 2
        k = max(k, int(np.count_nonzero(lam2 >= a2)))
        if k == 0:
            return step, applied
        if it > 0 and lam2[0] < a2 and np.all(np.abs(lam2[:k] - target) <= 1e-4 * eps_a):
            return step, applied
        # first pass linearizes around the current feasible point, refinements
        # around the candidate (Newton on each tracked singular value)
        ref = abar if it == 0 else cand
        corr = np.zeros_like(step)
        for i in range(k):
            u = vt[i]
            den = 2.0 * float(params.B @ ref @ u)
            if abs(den) < SINGULAR_TOL:
                raise ProjectionSingularError(f"B^T Abar u = {den / 2:.3g}: singular direction {i} is uncontrollable")
            corr += u * (lam2[i] - target) / den
            applied.append(u.copy())
        step = step - corr
    cand = params.feedback_matrix(v + step)
    if spectral_norm(cand) < params.a:
        return step, applied
    raise ProjectionSingularError("convergence correction did not settle")


def project_step(params: EsnParams, v, delta_v, eps_a: float = 1e-5) -> np.ndarray:
    """Correct ``delta_v`` so that ``sigma_max(A + B (v + delta_v')^T) < a``.

    A step that keeps every squared singular value below ``a**2`` is
    returned unchanged. Otherwise each violating singular value ``lam``
    (right-singular vector ``u``) is moved to ``a**2 - eps_a`` by subtracting
    ``u * (lam**2 - a**2 + eps_a) / (2 B^T Abar u)``, repeated until the
    linearization has converged.

    Raises:
        ProjectionSingularError: if ``|B^T Abar u|`` is below 1e-12 or the
            correction fails to land inside the region.
    """
    return _project(params, np.asarray(v, dtype=float), delta_v, eps_a)[0]


@dataclass(eq=False)
class _Point:
    v: np.ndarray
    trajectory: Trajectory
    solution: readout.ReadoutSolution
    grad: np.ndarray


def _evaluate(params: EsnParams, v, inputs, targets, windows: Windows) -> _Point:
    traj = run(params, v, inputs, windows)
    traj = sensitivities(params, v, traj)
    y = np.asarray(targets, dtype=float)[windows.train_slice]
    sol = readout.fit(traj.train_states, y)
    return _Point(v=np.array(v, dtype=float), trajectory=traj, solution=sol, grad=gradient(traj, sol, y))


def _record(params, p: _Point, projected: bool) -> GdRecord:
    sigma = spectral_norm(params.feedback_matrix(p.v))
    if not sigma < params.a:
        raise NumericOverflowError(f"iterate left the convergent region: sigma_max={sigma}")
    return GdRecord(
        s_min=p.solution.s_min, grad_norm=float(np.linalg.norm(p.grad)), projected=projected, sigma_max=sigma, v=p.v.copy()
    )


def _advance(params, point: _Point, raw, inputs, targets, windows, eps_a, history: GdHistory):
    """Apply one (projected) step; halve it on singular projections or overflow."""
    overflowed = False
    for _ in range(MAX_STEP_HALVINGS + 1):
        try:
            dv, applied = _project(params, point.v, raw, eps_a)
            nxt = _evaluate(params, point.v + dv, inputs, targets, windows)
            return nxt, bool(applied)
        except ProjectionSingularError:
            history.halvings += 1
            raw = raw / 2.0
        except NumericOverflowError:
            if overflowed:
                raise
            overflowed = True
            history.halvings += 1
            raw = raw / 2.0
    raise ProjectionSingularError("feedback step still singular after repeated halving")


def _ansatz_start(params, base: _Point, eta, inputs, targets, windows, eps_a) -> _Point:
    # V0 = -alpha * grad at V = 0, largest alpha on a halving grid that helps
    alpha = eta
    for _ in range(20):
        try:
            dv, _ = _project(params, base.v, -alpha * base.grad, eps_a)
            cand = _evaluate(params, base.v + dv, inputs, targets, windows)
            if cand.solution.s_min < base.solution.s_min:
                return cand
        except (ProjectionSingularError, NumericOverflowError):
            pass
        alpha /= 2.0
    return base


def optimize_arrays(params: EsnParams, inputs, targets, windows: Windows, config: GdConfig = GdConfig(), v0=None):
    """Gradient descent on ``V`` for explicit input/target arrays.

    Returns ``(v, solution, history)``; see :func:`optimize`.
    """
    v0 = np.zeros(params.n) if v0 is None else np.array(v0, dtype=float)
    point = _evaluate(params, v0, inputs, targets, windows)
    history = GdHistory([_record(params, point, False)])
    if config.init == "ansatz" and config.steps > 0:
        point = _ansatz_start(params, point, config.eta, inputs, targets, windows, config.eps_a)
        history.records.append(_record(params, point, False))
    best = point
    for _ in range(config.steps):
        point, projected = _advance(params, point, -config.eta * point.grad, inputs, targets, windows, config.eps_a, history)
        history.records.append(_record(params, point, projected))
        if point.solution.s_min < best.solution.s_min:
            best = point
    chosen = best if config.keep_best else point
    return chosen.v, chosen.solution, history


def optimize(params: EsnParams, dataset, config: GdConfig = GdConfig()):
    """Optimize the feedback vector on the dataset's training window.

    Each iteration runs the reservoir, re-solves ``(W, C)``, takes
    ``V <- V - eta * grad`` and projects the step back into the convergent
    region. With ``keep_best`` the lowest-cost iterate is returned, so the
    result is never worse than ``V = 0``.

    Returns:
        ``(v, solution, history)``.
    """
    return optimize_arrays(params, dataset.inputs, dataset.targets, dataset.windows, config)
