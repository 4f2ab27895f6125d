"""Benchmark datasets: Mackey-Glass prediction, nonlinear channel
equalization and the Coupled Electric Drives (CED) identification data.

Every dataset aligns ``inputs[t]`` and ``targets[t]`` index-for-index; the
reservoir state at ``t`` has consumed ``inputs[t]`` and is read out against
``targets[t]``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import readout
from .errors import DataError, NumericOverflowError, ProjectionSingularError, UsageError
from .feedback import GdConfig, GdHistory, GdRecord, _project, gradient
from .reservoir import EsnParams, Windows, input_sensitivities, run, sensitivities, spectral_norm

log = logging.getLogger(__name__)

TASK_KINDS = ("mackey_glass", "channel_eq", "ced")
TASK_ALIASES = {"mg": "mackey_glass", "ce": "channel_eq", "ced": "ced"}
SYMBOLS = np.array([-3.0, -1.0, 1.0, 3.0])
CHANNEL_TAPS = (0.08, -0.12, 1.0, 0.18, -0.1, 0.091, -0.05, 0.04, 0.03, 0.01)  # d_{k+2} .. d_{k-7}
SNR_AMPLITUDE = 39.81
CED_WINDOWS = Windows(19, 280, 200)
CED_ROWS = 500
CED_HEADERLESS = ("u1", "u2", "u3", "z1", "z2", "z3")


def task_kind(name: str) -> str:
    kind = TASK_ALIASES.get(name, name)
    if kind not in TASK_KINDS:
        raise UsageError(f"unknown task {name!r}; expected one of {sorted(TASK_ALIASES)}")
    return kind


@dataclass(eq=False)
class TaskDataset:
    inputs: np.ndarray
    targets: np.ndarray
    windows: Windows
    task_kind: str
    aux: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if self.inputs.size != self.targets.size:
            raise UsageError("inputs and targets must be aligned")
        if self.inputs.size < self.windows.total:
            raise UsageError(f"dataset of {self.inputs.size} steps cannot hold windows {self.windows}")

    @property
    def train_targets(self) -> np.ndarray:
        return self.targets[self.windows.train_slice]

    @property
    def test_targets(self) -> np.ndarray:
        return self.targets[self.windows.test_slice]

    def window_tags(self) -> List[str]:
        w = self.windows
        tags = ["warmup"] * w.warmup + ["train"] * w.train + ["test"] * w.test
        return tags + ["unused"] * (self.inputs.size - len(tags))


# --- Mackey-Glass -----------------------------------------------------------


def mackey_glass_rhs(y, y_delayed, beta=0.2, gamma=0.1, power=10):
    return beta * y_delayed / (1.0 + y_delayed ** power) - gamma * y


def mackey_glass_series(length: int, tau: int = 17, dt: float = 1.0, y0: float = 1.0, history: float = 0.0, **rhs) -> np.ndarray:
    """Explicit-Euler samples ``y_0 .. y_{length-1}`` of the delay equation.

    ``history`` is the value of ``y(t)`` for ``t < 0``. A constant history of
    1.0 together with ``y0 = 1.0`` is an equilibrium and yields a flat
    series, so the default is zero history.
    """
    lag = int(round(tau / dt))
    y = np.empty(lag + length)
    y[:lag] = history
    y[lag] = y0
    for k in range(lag, lag + length - 1):
        y[k + 1] = y[k] + dt * mackey_glass_rhs(y[k], y[k - lag], **rhs)
    return y[lag:]


def mackey_glass(windows: Windows, horizon: int = 10, burn_in: int = 1000) -> TaskDataset:
    """Predict ``y_k`` from ``u_k = y_{k-horizon}``; targets start at ``y_{burn_in}``."""
    if burn_in < horizon:
        raise UsageError("burn-in must cover the prediction horizon")
    y = mackey_glass_series(burn_in + windows.total)
    k = np.arange(burn_in, burn_in + windows.total)
    return TaskDataset(inputs=y[k - horizon], targets=y[k], windows=windows, task_kind="mackey_glass")


# --- Channel equalization ---------------------------------------------------


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def channel_equalization(windows: Windows, rng=None, noise: bool = True, nonlinear: bool = True, symbols=None) -> TaskDataset:
    """Recover ``d_k`` from the distorted channel output ``u_k``.

    ``symbols`` (length ``total + 9``) overrides the random draw; entry ``j``
    is ``d_{j-7}`` so that every ``q_k`` has its full 10-tap support.
    """
    rng = _rng(rng)
    T = windows.total
    if symbols is None:
        d_ext = rng.choice(SYMBOLS, size=T + 9)
    else:
        d_ext = np.asarray(symbols, dtype=float)
        if d_ext.size != T + 9:
            raise UsageError(f"expected {T + 9} symbols, got {d_ext.size}")
    q = np.convolve(d_ext, CHANNEL_TAPS, mode="valid")
    clean = q + 0.036 * q ** 2 - 0.011 * q ** 3 if nonlinear else q.copy()
    u = clean + rng.normal(0.0, np.abs(clean) / SNR_AMPLITUDE) if noise else clean.copy()
    d = d_ext[7 : 7 + T]
    return TaskDataset(
        inputs=u, targets=d, windows=windows, task_kind="channel_eq", aux={"symbols": d, "q": q, "clean": clean}
    )


def round_symbols(y_hat) -> np.ndarray:
    """Nearest symbol in {-3, -1, 1, 3}; ties at +-2 go to +-1 and 0 goes to +1."""
    y = np.asarray(y_hat, dtype=float)
    return np.where(y > 2.0, 3.0, np.where(y >= 0.0, 1.0, np.where(y >= -2.0, -1.0, -3.0)))


def symbol_errors(targets, y_hat) -> float:
    """Total of ``|d_k - round(y_hat_k)| / 2`` (a two-symbol miss counts twice)."""
    d = np.asarray(targets, dtype=float).reshape(-1)
    y = np.asarray(y_hat, dtype=float).reshape(-1)
    if d.shape != y.shape:
        raise UsageError(f"{d.size} targets vs {y.size} predictions")
    return float(np.sum(np.abs(d - round_symbols(y))) / 2.0)


# --- CED loading and CSV export ---------------------------------------------


def _split(line: str, delim: Optional[str]) -> List[str]:
    if delim is None:
        return line.split()
    return [tok.strip() for tok in line.split(delim)]


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_table(path) -> Tuple[Optional[List[str]], np.ndarray]:
    """Read comma/semicolon/whitespace-delimited numeric text with an optional header."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: no data")
    first = lines[0][1]
    delim = "," if "," in first else (";" if ";" in first else None)
    header = None
    head_toks = _split(first, delim)
    if not all(_is_number(t) for t in head_toks):
        header = [t.strip().strip('"') for t in head_toks]
        lines = lines[1:]
    width = len(header) if header else len(head_toks)
    rows = []
    for lineno, ln in lines:
        toks = _split(ln, delim)
        if len(toks) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(toks)}")
        row = []
        for col, tok in enumerate(toks):
            try:
                row.append(float(tok))
            except ValueError:
                name = header[col] if header else col
                raise DataError(f"{path}:{lineno}: column {name!r}: cannot parse {tok!r}") from None
        rows.append(row)
    return header, np.array(rows, dtype=float).reshape(len(rows), width)


def _column(header, data, key: Union[str, int], path) -> np.ndarray:
    if isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
        idx = int(key)
        if not 0 <= idx < data.shape[1]:
            raise DataError(f"{path}: column index {idx} out of range (file has {data.shape[1]} columns)")
        return data[:, idx]
    names = header
    if names is None and data.shape[1] == len(CED_HEADERLESS):
        names = list(CED_HEADERLESS)
    if names is None or key not in names:
        raise DataError(f"{path}: missing column {key!r} (available: {names or list(range(data.shape[1]))})")
    return data[:, names.index(key)]


def load_ced(path, input_column: Union[str, int] = "u2", output_column: Union[str, int] = "z2",
             windows: Windows = CED_WINDOWS, allow_resize: bool = False) -> TaskDataset:
    """Load a CED input/output pair.

    Expects ``CED_ROWS`` rows; a different row count is rejected unless
    ``allow_resize`` is set, in which case the windows are scaled
    proportionally and a warning is issued. A headerless six-column file is
    read as ``u1 u2 u3 z1 z2 z3``.
    """
    header, data = read_table(path)
    u = _column(header, data, input_column, path)
    y = _column(header, data, output_column, path)
    rows = data.shape[0]
    if rows != CED_ROWS:
        if not allow_resize:
            raise DataError(f"{path}: expected {CED_ROWS} rows, found {rows}")
        f = rows / CED_ROWS
        windows = Windows(int(windows.warmup * f), max(int(windows.train * f), 2), int(windows.test * f))
        warnings.warn(f"{path}: {rows} rows; windows rescaled to {windows}", stacklevel=2)
    if rows < windows.total:
        raise DataError(f"{path}: {rows} rows cannot hold windows {windows}")
    return TaskDataset(inputs=u, targets=y, windows=windows, task_kind="ced", aux={"raw": data})


def export_csv(dataset: TaskDataset, path=None) -> str:
    """Write ``k,u,y,window`` rows (floats in repr form, so a reload is exact)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "u", "y", "window"])
    for k, (u, y, tag) in enumerate(zip(dataset.inputs, dataset.targets, dataset.window_tags())):
        writer.writerow([k, repr(float(u)), repr(float(y)), tag])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_task_csv(path, task_kind: str = "ced") -> TaskDataset:
    """Reload a file written by :func:`export_csv`."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        u = [float(r["u"]) for r in rows]
        y = [float(r["y"]) for r in rows]
        tags = [r["window"] for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed task CSV ({exc})") from None
    windows = Windows(tags.count("warmup"), tags.count("train"), tags.count("test"))
    return TaskDataset(inputs=u, targets=y, windows=windows, task_kind=task_kind)


# --- CED autoregressive drive -----------------------------------------------


@dataclass(eq=False)
class MixingParam:
    """Mixing weight ``s`` and the (s, training cost) trace of its descent."""

    s: float = 0.0
    history: List[Tuple[float, float]] = field(default_factory=list)


def ced_input(dataset: TaskDataset, s: float, v, x, k: int) -> float:
    """Reservoir drive produced at step ``k``: ``s*u2_k + (1-s)*y_k + V^T x_k``.

    It feeds the state at ``k + 1``, so the readout at ``k + 1`` only sees
    measured outputs up to ``k``.
    """
    fb = 0.0 if v is None else float(np.dot(v, x))
    return s * dataset.inputs[k] + (1.0 - s) * dataset.targets[k] + fb


def ced_drive(dataset: TaskDataset, s: float) -> np.ndarray:
    """External part of the drive aligned to state index (feedback enters via ``A + B V^T``)."""
    drive = np.zeros(dataset.inputs.size)
    drive[1:] = s * dataset.inputs[:-1] + (1.0 - s) * dataset.targets[:-1]
    return drive


def ced_drive_grad(dataset: TaskDataset) -> np.ndarray:
    grad = np.zeros(dataset.inputs.size)
    grad[1:] = dataset.inputs[:-1] - dataset.targets[:-1]
    return grad


def _ced_point(params, dataset, s, v, want_v_grad):
    w = dataset.windows
    traj = run(params, v, ced_drive(dataset, s), w)
    y = dataset.train_targets
    sol = readout.fit(traj.train_states, y)
    r = traj.train_states @ sol.W + sol.C - y
    dxds = input_sensitivities(params, v, traj, ced_drive_grad(dataset))
    grad_s = float(np.mean((dxds @ sol.W) * r))
    grad_v = None
    if want_v_grad:
        grad_v = gradient(sensitivities(params, v, traj), sol, y)
    return traj, sol, grad_s, grad_v


def mixing_gradient(params: EsnParams, dataset: TaskDataset, s: float, v=None) -> float:
    """``dS/ds`` at fixed readout, from the drive-sensitivity recursion."""
    v = np.zeros(params.n) if v is None else np.asarray(v, dtype=float)
    return _ced_point(params, dataset, s, v, False)[2]


def optimize_mixing(params: EsnParams, dataset: TaskDataset, v=None, lr: float = 0.0012, steps: int = 100) -> MixingParam:
    """Gradient descent on ``s`` from 0 at fixed feedback; returns the best-cost ``s``."""
    v = np.zeros(params.n) if v is None else np.asarray(v, dtype=float)
    s = 0.0
    result = MixingParam()
    best = (math.inf, 0.0)
    for it in range(steps + 1):
        _, sol, g, _ = _ced_point(params, dataset, s, v, False)
        result.history.append((s, sol.s_min))
        if sol.s_min < best[0]:
            best = (sol.s_min, s)
        s -= lr * g
    result.s = best[1]
    return result


@dataclass(eq=False)
class CedFit:
    s: float
    v: np.ndarray
    solution: readout.ReadoutSolution
    history: GdHistory
    mixing: MixingParam


def optimize_ced(params: EsnParams, dataset: TaskDataset, config: GdConfig, feedback: bool = True,
                 mixing_lr: Optional[float] = None) -> CedFit:
    """Fit the mixing weight and (optionally) the feedback gain on CED data.

    With feedback, each iteration takes one ``s`` step and then one
    projected ``V`` step at the updated ``s``. The lowest-cost ``(s, V)``
    visited is returned.
    """
    if mixing_lr is None:
        mixing_lr = 0.001 if feedback else 0.0012
    if not feedback:
        mix = optimize_mixing(params, dataset, None, mixing_lr, config.steps)
        v = np.zeros(params.n)
        _, sol, _, _ = _ced_point(params, dataset, mix.s, v, False)
        hist = GdHistory([GdRecord(sol.s_min, 0.0, False, spectral_norm(params.A), v)])
        return CedFit(mix.s, v, sol, hist, mix)

    s, v = 0.0, np.zeros(params.n)
    _, sol, grad_s, _ = _ced_point(params, dataset, s, v, False)
    mix = MixingParam(history=[(s, sol.s_min)])
    history = GdHistory([GdRecord(sol.s_min, 0.0, False, spectral_norm(params.A), v.copy())])
    best = (sol.s_min, s, v.copy(), sol)
    for _ in range(config.steps):
        s -= mixing_lr * grad_s
        _, sol, _, grad_v = _ced_point(params, dataset, s, v, True)
        mix.history.append((s, sol.s_min))
        if sol.s_min < best[0]:
            best = (sol.s_min, s, v.copy(), sol)
        raw = -config.eta * grad_v
        for attempt in range(11):
            try:
                dv, applied = _project(params, v, raw, config.eps_a)
                _, sol, grad_s, _ = _ced_point(params, dataset, s, v + dv, False)
                break
            except (ProjectionSingularError, NumericOverflowError):
                if attempt == 10:
                    raise
                history.halvings += 1
                raw = raw / 2.0
        v = v + dv
        sigma = spectral_norm(params.feedback_matrix(v))
        history.records.append(GdRecord(sol.s_min, float(np.linalg.norm(grad_v)), bool(applied), sigma, v.copy()))
        if sol.s_min < best[0]:
            best = (sol.s_min, s, v.copy(), sol)
    _, s_best, v_best, sol_best = best
    mix.s = s_best
    return CedFit(s_best, v_best, sol_best, history, mix)


def ced_predictions(params: EsnParams, dataset: TaskDataset, fit: CedFit) -> np.ndarray:
    """Teacher-forced one-step-ahead predictions over the whole record."""
    traj = run(params, fit.v, ced_drive(dataset, fit.s), dataset.windows)
    return traj.states @ fit.solution.W + fit.solution.C
