"""Ensemble experiments: sample reservoirs, train with and without feedback, aggregate.

Config files are flat ``key = value`` text::

    # comments and blank lines are ignored
    task = mg            # mg | ce | ced
    nodes = 10
    members = 200
    feedback = true      # true/false, yes/no, on/off, 1/0
    eta = 25.0
    gd_steps = 100

Recognized keys are listed in ``CONFIG_KEYS``. Values given on the command
line override the file. Task-dependent defaults (node count, learning rate,
windows) apply to any key left unset.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from . import analysis, diagnostics, readout, tasks
from .errors import DataError, EsnError, NumericError, UsageError
from .feedback import GdConfig, optimize_arrays
from .reservoir import EsnParams, Windows, run, sensitivities, spectral_norm
from .sampler import SamplerSpec, sample_esn

log = logging.getLogger(__name__)

FAILURE_BUDGET = 0.01
FULL_SCALE_MEMBERS = 9600
TASK_DEFAULTS = {
    "mackey_glass": {"nodes": 10, "eta": 25.0, "windows": Windows(500, 1000, 500)},
    "channel_eq": {"nodes": 10, "eta": 10.0, "windows": Windows(500, 1000, 500)},
    "ced": {"nodes": 2, "eta": 27.0, "windows": tasks.CED_WINDOWS},
}


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text is None or str(text).strip().lower() in ("", "none", "auto") else int(text)


def _opt_str(text):
    return None if text is None or str(text).strip() in ("", "none") else str(text)


CONFIG_KEYS: Dict[str, Callable] = {
    "task": str,
    "nodes": int,
    "members": int,
    "feedback": _bool,
    "eta": float,
    "gd_steps": int,
    "eps_a": float,
    "keep_best": _bool,
    "init": str,
    "seed": int,
    "data_seed": _opt_int,
    "activation": str,
    "rho_min": float,
    "rho_max": float,
    "b_scale": float,
    "warmup": int,
    "train": int,
    "test": int,
    "max_lag": int,
    "bins": int,
    "out": str,
    "threads": _opt_int,
    "ced_file": _opt_str,
    "full_scale": _bool,
}


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "mackey_glass"
    nodes: int = 10
    members: int = 200
    feedback: bool = False
    gd: GdConfig = field(default_factory=GdConfig)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    windows: Windows = Windows(500, 1000, 500)
    max_lag: int = 30
    output_dir: str = "results"
    threads: Optional[int] = None
    ced_file: Optional[str] = None
    data_seed: int = 0
    bins: int = 30

    def __post_init__(self):
        if self.members < 1 or self.max_lag < 1 or self.bins < 1:
            raise UsageError("members, max_lag and bins must be positive")
        if self.threads is not None and self.threads < 1:
            raise UsageError("threads must be positive")
        if self.windows.train < 2 or self.windows.warmup < 0 or self.windows.test < 1:
            raise UsageError(f"invalid windows {self.windows}")
        if self.sampler.n != self.nodes:
            raise UsageError("sampler node count differs from config")

    @property
    def metric(self) -> str:
        return "errors" if self.task == "channel_eq" else "nmse"

    def flat(self) -> Dict[str, object]:
        """Every setting as a flat key/value mapping (the file grammar)."""
        return {
            "task": self.task,
            "nodes": self.nodes,
            "members": self.members,
            "feedback": self.feedback,
            "eta": self.gd.eta,
            "gd_steps": self.gd.steps,
            "eps_a": self.gd.eps_a,
            "keep_best": self.gd.keep_best,
            "init": self.gd.init,
            "seed": self.sampler.seed,
            "data_seed": self.data_seed,
            "activation": self.sampler.activation,
            "rho_min": self.sampler.rho_range[0],
            "rho_max": self.sampler.rho_range[1],
            "b_scale": self.sampler.b_scale,
            "warmup": self.windows.warmup,
            "train": self.windows.train,
            "test": self.windows.test,
            "max_lag": self.max_lag,
            "bins": self.bins,
            "out": self.output_dir,
            "threads": self.threads,
            "ced_file": self.ced_file,
        }

    def dumps(self) -> str:
        """Resolved config in the file grammar; re-parsing it gives the same config."""
        lines = []
        for k, v in self.flat().items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    values: Dict[str, object] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{source}:{no}: expected 'key = value', got {raw.strip()!r}")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{no}: unknown key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](val.strip())
        except ValueError as exc:
            raise UsageError(f"{source}:{no}: bad value for {key}: {exc}") from None
    return values


def load_config_file(path) -> Dict[str, object]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def resolve_config(file_values: Mapping[str, object] = (), overrides: Mapping[str, object] = ()) -> ExperimentConfig:
    """Merge defaults, file values and overrides (later wins) into a config."""
    v: Dict[str, object] = {}
    for src in (dict(file_values), dict(overrides)):
        for key, val in src.items():
            if val is None:
                continue
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            v[key] = val
    try:
        kind = tasks.task_kind(str(v.get("task", "mg")))
        d = TASK_DEFAULTS[kind]
        seed = int(v.get("seed", 0))
        members = int(v.get("members", 200))
        if v.get("full_scale"):
            members = FULL_SCALE_MEMBERS
        nodes = int(v.get("nodes", d["nodes"]))
        w = d["windows"]
        windows = Windows(int(v.get("warmup", w.warmup)), int(v.get("train", w.train)), int(v.get("test", w.test)))
        gd = GdConfig(
            eta=float(v.get("eta", d["eta"])),
            steps=int(v.get("gd_steps", 100)),
            eps_a=float(v.get("eps_a", 1e-5)),
            keep_best=bool(v.get("keep_best", True)),
            init=str(v.get("init", "zero")),
        )
        sampler = SamplerSpec(
            n=nodes,
            activation=str(v.get("activation", "sigmoid")),
            rho_range=(float(v.get("rho_min", 0.1)), float(v.get("rho_max", 0.975))),
            b_scale=float(v.get("b_scale", 1.0)),
            seed=seed,
        )
        data_seed = v.get("data_seed")
        return ExperimentConfig(
            task=kind,
            nodes=nodes,
            members=members,
            feedback=bool(v.get("feedback", False)),
            gd=gd,
            sampler=sampler,
            windows=windows,
            max_lag=int(v.get("max_lag", 30)),
            output_dir=str(v.get("out", "results")),
            threads=v.get("threads"),
            ced_file=v.get("ced_file"),
            data_seed=seed if data_seed is None else int(data_seed),
            bins=int(v.get("bins", 30)),
        )
    except KeyError as exc:
        raise UsageError(f"unknown activation {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, EsnError):
            raise
        raise UsageError(str(exc)) from None


# --- members -----------------------------------------------------------------


def build_dataset(config: ExperimentConfig, index: int = 0) -> tasks.TaskDataset:
    """Dataset for one member; channel noise and symbols are drawn per member."""
    if config.task == "mackey_glass":
        return tasks.mackey_glass(config.windows)
    if config.task == "channel_eq":
        rng = np.random.default_rng(np.random.SeedSequence(config.data_seed, spawn_key=(index, 1)))
        return tasks.channel_equalization(config.windows, rng)
    if not config.ced_file:
        raise DataError("the ced task needs a data file (--ced-file)")
    return tasks.load_ced(config.ced_file, windows=config.windows)


def _test_metric(task: str, dataset: tasks.TaskDataset, predictions: np.ndarray) -> float:
    y_hat = predictions[dataset.windows.test_slice]
    if task == "channel_eq":
        return float(tasks.symbol_errors(dataset.test_targets, y_hat))
    return readout.nmse(y_hat, dataset.test_targets)


def _variant(task, dataset, traj, sol, extra=None) -> dict:
    out = {
        "s_min": sol.s_min,
        "train_nmse": sol.nmse_train,
        "test": _test_metric(task, dataset, traj.states @ sol.W + sol.C),
    }
    out.update(extra or {})
    return out


def _gd_summary(history) -> dict:
    return {
        "steps": len(history.records) - 1,
        "halvings": history.halvings,
        "projected_steps": int(sum(r.projected for r in history.records)),
        "max_sigma": float(history.sigma_max.max()),
        "tail": history.tail(5),
    }


def _certificate(params: EsnParams, inputs, dataset: tasks.TaskDataset) -> dict:
    v0 = np.zeros(params.n)
    traj = sensitivities(params, v0, run(params, v0, inputs, dataset.windows))
    sol = readout.fit(traj.train_states, dataset.train_targets)
    return diagnostics.certificate(traj, sol, dataset.train_targets).to_dict()


def _residual_stats(config, dataset, predictions) -> dict:
    t = dataset.windows.test_slice
    e = dataset.targets[t] - predictions[t]
    rep = analysis.residual_report(e, dataset.inputs[t], min(config.max_lag, e.size - 2))
    return {"lag1": float(rep.autocorr[0]), "input_corr": rep.input_corr, "ci_95": rep.ci_95,
            "lilliefors_stat": rep.lilliefors_stat, "lilliefors_pass": rep.lilliefors_pass}


def _ced_member(config, params, dataset, record) -> dict:
    fits = {"off": tasks.optimize_ced(params, dataset, config.gd, feedback=False)}
    if config.feedback:
        fits["on"] = tasks.optimize_ced(params, dataset, config.gd, feedback=True)
    record["certificate"] = _certificate(params, tasks.ced_drive(dataset, fits["off"].s), dataset)
    for name, fit in fits.items():
        pred = tasks.ced_predictions(params, dataset, fit)
        record[name] = {
            "s_min": fit.solution.s_min,
            "train_nmse": fit.solution.nmse_train,
            "test": readout.nmse(pred[dataset.windows.test_slice], dataset.test_targets),
            "mixing_s": fit.s,
            **_residual_stats(config, dataset, pred),
        }
    if config.feedback:
        record["gd"] = _gd_summary(fits["on"].history)
        record["v"] = [float(x) for x in fits["on"].v]
    return record


def run_member(config: ExperimentConfig, index: int, dataset: Optional[tasks.TaskDataset] = None) -> dict:
    """Train one sampled reservoir; returns its JSON-ready record."""
    params = sample_esn(config.sampler, index)
    record = {"index": index, "seed": config.sampler.seed, "status": "ok", "rho": spectral_norm(params.A) / params.a}
    if dataset is None:
        dataset = build_dataset(config, index)
    if config.task == "ced":
        return _ced_member(config, params, dataset, record)
    v0 = np.zeros(params.n)
    base = run(params, v0, dataset.inputs, dataset.windows)
    sol0 = readout.fit(base.train_states, dataset.train_targets)
    record["off"] = _variant(config.task, dataset, base, sol0)
    record["certificate"] = _certificate(params, dataset.inputs, dataset)
    if config.feedback:
        v, sol, hist = optimize_arrays(params, dataset.inputs, dataset.targets, dataset.windows, config.gd)
        traj = run(params, v, dataset.inputs, dataset.windows)
        record["on"] = _variant(config.task, dataset, traj, sol)
        record["gd"] = _gd_summary(hist)
        record["v"] = [float(x) for x in v]
    return record


def _safe_member(config, index, shared) -> dict:
    try:
        return run_member(config, index, shared)
    except DataError:
        raise
    except (EsnError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("member %d failed: %s", index, exc)
        return {"index": index, "seed": config.sampler.seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


# --- aggregation ---------------------------------------------------------------


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    records: List[dict]
    summaries: Dict[str, analysis.EnsembleSummary]
    summary: dict

    @property
    def failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.records)


def aggregate(config: ExperimentConfig, records: List[dict]):
    ok = [r for r in records if r["status"] == "ok"]
    failed = [r["index"] for r in records if r["status"] != "ok"]
    variants = ["off"] + (["on"] if config.feedback else [])
    summary = {
        "task": config.task,
        "metric": config.metric,
        "members": len(records),
        "completed": len(ok),
        "failed": len(failed),
        "failed_indices": failed,
    }
    summaries: Dict[str, analysis.EnsembleSummary] = {}
    if not ok:
        return summaries, summary
    edges = analysis.shared_edges([[r[v]["test"] for r in ok] for v in variants], config.bins)
    for v in variants:
        summaries[v] = analysis.summarize([r[v]["test"] for r in ok], edges, [r["index"] for r in ok])
        summary[v] = {
            **summaries[v].to_dict(),
            "train_nmse_mean": float(np.mean([r[v]["train_nmse"] for r in ok])),
        }
        if config.task == "ced":
            for key in ("lag1", "input_corr"):
                summary[v][f"{key}_mean"] = float(np.mean([r[v][key] for r in ok]))
            summary[v]["lilliefors_pass_rate"] = float(np.mean([r[v]["lilliefors_pass"] for r in ok]))
    if config.feedback:
        off, on = summaries["off"].mean, summaries["on"].mean
        summary["reduction_pct"] = 100.0 * (1.0 - on / off) if off > 0 else 0.0
        s_off = np.array([r["off"]["s_min"] for r in ok])
        s_on = np.array([r["on"]["s_min"] for r in ok])
        summary["train_cost"] = {
            "not_worse": int(np.sum(s_on <= s_off)),
            "strictly_better": int(np.sum(s_on < s_off * (1.0 - 1e-10))),
            "max_sigma_ratio": float(max(r["gd"]["max_sigma"] for r in ok) / config.sampler.a),
            "halvings": int(sum(r["gd"]["halvings"] for r in ok)),
        }
    cert = [r["certificate"] for r in ok]
    summary["certificate"] = {
        "degenerate": int(sum(c["degenerate"] for c in cert)),
        "min_trace": float(min(c["trace_m_par"] for c in cert)),
        "min_grad_norm": float(min(c["grad_norm"] for c in cert)),
    }
    return summaries, summary


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_ced_residuals(config: ExperimentConfig, dataset: tasks.TaskDataset, out: Path):
    """Residuals, autocorrelation and Q-Q pairs for member 0."""
    params = sample_esn(config.sampler, 0)
    t = dataset.windows.test_slice
    ks = np.arange(dataset.inputs.size)[t]
    res, acf, qq = [], [], []
    for name, fb in (("off", False), ("on", True)):
        if fb and not config.feedback:
            continue
        fit = tasks.optimize_ced(params, dataset, config.gd, feedback=fb)
        pred = tasks.ced_predictions(params, dataset, fit)
        e = dataset.targets[t] - pred[t]
        res += [(name, int(k), repr(float(y)), repr(float(p)), repr(float(r))) for k, y, p, r in zip(ks, dataset.targets[t], pred[t], e)]
        rep = analysis.residual_report(e, dataset.inputs[t], min(config.max_lag, e.size - 2))
        acf += [(name, lag, repr(float(r)), repr(float(rep.ci_95))) for lag, r in enumerate(rep.autocorr, 1)]
        qq += [(name, repr(float(a)), repr(float(b))) for a, b in rep.qq_points]
    _write_csv(out / "residuals.csv", ["variant", "k", "y", "yhat", "e"], res)
    _write_csv(out / "residuals_acf.csv", ["variant", "lag", "R_k", "ci_95"], acf)
    _write_csv(out / "qq.csv", ["variant", "theoretical", "empirical"], qq)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every member, aggregate, and (optionally) write the output files.

    Files in ``config.output_dir``: ``config.txt`` (resolved config),
    ``members.jsonl``, ``histogram.csv``, ``summary.json`` and, for the CED
    task, ``residuals.csv``, ``residuals_acf.csv`` and ``qq.csv``.

    Raises:
        DataError: if the CED data file is missing or malformed.
        NumericError: if more than 1% of members fail (files are still written).
    """
    shared = None
    if config.task != "channel_eq":
        shared = build_dataset(config)
    threads = config.threads or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=threads) as pool:
        records = list(pool.map(lambda i: _safe_member(config, i, shared), range(config.members)))
    records.sort(key=lambda r: r["index"])
    summaries, summary = aggregate(config, records)
    result = ExperimentResult(config, records, summaries, summary)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config.dumps())
        with open(out / "members.jsonl", "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        _write_csv(
            out / "histogram.csv",
            ["variant", "bin_left", "bin_right", "count"],
            [(n, repr(lo), repr(hi), c) for n, lo, hi, c in analysis.histogram_rows(summaries)],
        )
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        if config.task == "ced" and result.failed < config.members:
            _write_ced_residuals(config, shared, out)
    if result.failed > FAILURE_BUDGET * config.members:
        raise NumericError(f"{result.failed} of {config.members} members failed")
    return result
