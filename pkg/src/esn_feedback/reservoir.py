"""Echo state network dynamics with linear state feedback.

State convention: ``states[t]`` is the reservoir state after consuming
``inputs[t]``, i.e. ``states[t] = g(Abar @ states[t-1] + B * inputs[t])`` with
``Abar = A + B V^T``, and the readout at index ``t`` is compared with
``targets[t]``. The state before ``states[0]`` is the initial state ``x0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numba
import numpy as np

from .errors import NumericOverflowError, UsageError

CONTRACTION_BOUND = {"sigmoid": 4.0, "tanh": 1.0}
_ACT_CODE = {"sigmoid": 0, "tanh": 1}


@dataclass(frozen=True)
class Windows:
    """Lengths of the warmup (washout), training and test windows."""

    warmup: int
    train: int
    test: int = 0

    def __post_init__(self):
        if self.warmup < 0 or self.train < 1 or self.test < 0:
            raise UsageError(f"invalid windows {self}")

    @property
    def total(self) -> int:
        return self.warmup + self.train + self.test

    @property
    def train_slice(self) -> slice:
        return slice(self.warmup, self.warmup + self.train)

    @property
    def test_slice(self) -> slice:
        return slice(self.warmup + self.train, self.total)


@dataclass(frozen=True, eq=False)
class EsnParams:
    """A fixed reservoir ``x -> g(A x + B u)``.

    The contraction bound ``a`` follows from the activation (4 for the
    sigmoid, 1 for tanh); ``A`` must have all singular values below it.
    """

    A: np.ndarray
    B: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float).reshape(-1)
        if self.activation not in CONTRACTION_BOUND:
            raise UsageError(f"unknown activation {self.activation!r}")
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != B.shape[0] or B.size < 1:
            raise UsageError(f"A {A.shape} and B {B.shape} do not describe an n-node reservoir")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise UsageError("reservoir weights must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if spectral_norm(A) >= self.a:
            raise UsageError(
                f"largest singular value of A ({spectral_norm(A):.6g}) must be < {self.a}"
            )

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def a(self) -> float:
        return CONTRACTION_BOUND[self.activation]

    def feedback_matrix(self, v=None) -> np.ndarray:
        """Effective internal weights ``A + B v^T``."""
        if v is None:
            return self.A
        return self.A + np.outer(self.B, self._check_v(v))

    def is_convergent(self, v=None) -> bool:
        return spectral_norm(self.feedback_matrix(v)) < self.a

    def _check_v(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.n,):
            raise UsageError(f"feedback vector has length {v.size}, expected {self.n}")
        return v


def spectral_norm(m) -> float:
    return float(np.linalg.norm(m, 2))


def check_feedback(params: EsnParams, v) -> np.ndarray:
    """Validate a feedback vector against ``params``; returns it as an array."""
    v = params._check_v(v)
    s = spectral_norm(params.feedback_matrix(v))
    if not s < params.a:
        raise UsageError(f"feedback makes the reservoir non-convergent: sigma_max={s:.6g} >= {params.a}")
    return v


def default_initial_state(params: EsnParams) -> np.ndarray:
    # midpoint of the activation range; irrelevant after washout
    fill = 0.5 if params.activation == "sigmoid" else 0.0
    return np.full(params.n, fill)


def _activate(z, activation):
    if activation == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.tanh(z)


def step(params: EsnParams, v, x, u: float) -> np.ndarray:
    """One reservoir update ``g((A + B v^T) x + B u)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.n,):
        raise UsageError(f"state has shape {x.shape}, expected ({params.n},)")
    abar = params.feedback_matrix(None if v is None else v)
    out = _activate(abar @ x + params.B * float(u), params.activation)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("non-finite reservoir state", step=0)
    return out


@dataclass(eq=False)
class Trajectory:
    """Recorded reservoir states for one input sequence.

    ``sensitivities`` (when filled) has shape ``(train, n, n)`` with
    ``sensitivities[k, i, j] = d x_{k,i} / d V_j`` over the training window.
    """

    states: np.ndarray
    windows: Windows
    x0: np.ndarray
    inputs: np.ndarray
    v: np.ndarray
    sensitivities: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def train_states(self) -> np.ndarray:
        return self.states[self.windows.train_slice]

    @property
    def test_states(self) -> np.ndarray:
        return self.states[self.windows.test_slice]

    def previous_state(self, t: int) -> np.ndarray:
        return self.x0 if t == 0 else self.states[t - 1]


@numba.njit(cache=True, nogil=True)
def _run_kernel(abar, b, inputs, x0, act, out):
    n = x0.shape[0]
    x = x0.copy()
    for t in range(inputs.shape[0]):
        bad = False
        for i in range(n):
            z = b[i] * inputs[t]
            for m in range(n):
                z += abar[i, m] * x[m]
            if act == 0:
                y = 0.5 * (1.0 + np.tanh(0.5 * z))
            else:
                y = np.tanh(z)
            if not np.isfinite(y):
                bad = True
            out[t, i] = y
        if bad:
            return t
        for i in range(n):
            x[i] = out[t, i]
    return -1


@numba.njit(cache=True, nogil=True)
def _feedback_sens_kernel(abar, b, states, x0, act, origin, lo, hi):
    n = x0.shape[0]
    out = np.zeros((hi - lo, n, n))
    d = np.zeros((n, n))
    nd = np.zeros((n, n))
    for t in range(origin + 1, hi):
        for i in range(n):
            xi = states[t, i]
            gp = xi * (1.0 - xi) if act == 0 else 1.0 - xi * xi
            for j in range(n):
                prev = x0[j] if t == 0 else states[t - 1, j]
                acc = b[i] * prev
                for m in range(n):
                    acc += abar[i, m] * d[m, j]
                nd[i, j] = gp * acc
        tmp = d
        d = nd
        nd = tmp
        if t >= lo:
            for i in range(n):
                for j in range(n):
                    out[t - lo, i, j] = d[i, j]
    return out


@numba.njit(cache=True, nogil=True)
def _input_sens_kernel(abar, b, states, drive_grad, act, origin, lo, hi):
    n = b.shape[0]
    out = np.zeros((hi - lo, n))
    d = np.zeros(n)
    nd = np.zeros(n)
    for t in range(origin + 1, hi):
        for i in range(n):
            xi = states[t, i]
            gp = xi * (1.0 - xi) if act == 0 else 1.0 - xi * xi
            acc = b[i] * drive_grad[t]
            for m in range(n):
                acc += abar[i, m] * d[m]
            nd[i] = gp * acc
        tmp = d
        d = nd
        nd = tmp
        if t >= lo:
            for i in range(n):
                out[t - lo, i] = d[i]
    return out


def run(params: EsnParams, v, inputs, windows: Optional[Windows] = None, x0=None) -> Trajectory:
    """Drive the reservoir with ``inputs`` under feedback ``v``.

    Raises:
        UsageError: if the inputs do not cover the windows or shapes disagree.
        NumericOverflowError: if any state becomes non-finite.
    """
    inputs = np.ascontiguousarray(inputs, dtype=float).reshape(-1)
    if windows is None:
        windows = Windows(0, inputs.size, 0)
    if inputs.size < windows.total:
        raise UsageError(f"{inputs.size} inputs do not cover {windows.total} steps")
    inputs = inputs[: windows.total]
    v = np.zeros(params.n) if v is None else params._check_v(v)
    x0 = default_initial_state(params) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (params.n,):
        raise UsageError(f"x0 has shape {x0.shape}, expected ({params.n},)")
    abar = np.ascontiguousarray(params.feedback_matrix(v))
    states = np.empty((inputs.size, params.n))
    bad = _run_kernel(abar, params.B, inputs, x0, _ACT_CODE[params.activation], states)
    if bad >= 0:
        raise NumericOverflowError(f"reservoir state became non-finite at step {bad}", step=int(bad))
    return Trajectory(states=states, windows=windows, x0=x0.copy(), inputs=inputs, v=v.copy())


def _origin(traj: Trajectory, origin: Optional[int]) -> int:
    if origin is None:
        return -1
    if not -1 <= origin < traj.windows.warmup + traj.windows.train:
        raise UsageError(f"sensitivity origin {origin} outside the recorded run")
    return origin


def sensitivities(params: EsnParams, v, trajectory: Trajectory, origin: Optional[int] = None) -> Trajectory:
    """Fill ``d x_k / d V`` over the training window.

    The recursion is ``D_t = Sigma_t (B x_{t-1}^T + Abar D_{t-1})`` with
    ``Sigma_t = diag(g'(z_t))``. ``D`` is zero at state index ``origin``;
    the default (``None``) places the zero at the initial state, so the
    result is the exact derivative of the whole recorded run.
    """
    if trajectory.states is None or trajectory.states.shape[1:] != (params.n,):
        raise UsageError("trajectory states missing or inconsistent with params")
    v = np.zeros(params.n) if v is None else params._check_v(v)
    w = trajectory.windows
    sens = _feedback_sens_kernel(
        np.ascontiguousarray(params.feedback_matrix(v)),
        params.B,
        trajectory.states,
        trajectory.x0,
        _ACT_CODE[params.activation],
        _origin(trajectory, origin),
        w.warmup,
        w.warmup + w.train,
    )
    if not np.all(np.isfinite(sens)):
        raise NumericOverflowError("non-finite state sensitivity")
    return replace(trajectory, sensitivities=sens)


def input_sensitivities(params: EsnParams, v, trajectory: Trajectory, drive_grad, origin: Optional[int] = None) -> np.ndarray:
    """``d x_k / d theta`` over the training window for a scalar drive parameter.

    ``drive_grad[t]`` is the derivative of ``inputs[t]`` with respect to
    ``theta``; the recursion is ``d_t = Sigma_t (B c_t + Abar d_{t-1})``.
    Returns an array of shape ``(train, n)``.
    """
    drive_grad = np.ascontiguousarray(drive_grad, dtype=float).reshape(-1)
    if drive_grad.size < trajectory.states.shape[0]:
        raise UsageError("drive derivative shorter than the trajectory")
    v = np.zeros(params.n) if v is None else params._check_v(v)
    w = trajectory.windows
    return _input_sens_kernel(
        np.ascontiguousarray(params.feedback_matrix(v)),
        params.B,
        trajectory.states,
        drive_grad,
        _ACT_CODE[params.activation],
        _origin(trajectory, origin),
        w.warmup,
        w.warmup + w.train,
    )
