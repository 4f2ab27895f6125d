"""Residual statistics and ensemble aggregation.

Residual checks follow the usual system-identification battery: residual
autocorrelation against a white-noise band, correlation with the input,
and a Lilliefors normality test whose critical values come from a seeded
Monte-Carlo table.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .errors import DegenerateTargetError, UsageError

Z_95 = 1.96
LILLIEFORS_SEED = 20160613
LILLIEFORS_REPLICATES = 10_000


def _residuals(e, min_len=2) -> np.ndarray:
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.size < min_len:
        raise UsageError(f"need at least {min_len} residuals, got {e.size}")
    if not np.all(np.isfinite(e)):
        raise UsageError("residuals contain non-finite values")
    return e


def autocorrelation(e, max_lag: int = 30) -> Tuple[np.ndarray, float]:
    """``R_k = 1/(N-1) sum_{j<N-k} (e_j - ebar)(e_{j+k} - ebar) / var_e`` for k = 1..max_lag.

    ``var_e`` is the sample variance (``ddof=1``), which keeps ``|R_k| <= 1``.

    Returns:
        ``(R, ci_95)`` with ``ci_95 = 1.96 / sqrt(N)``.
    """
    e = _residuals(e)
    N = e.size
    if max_lag < 1 or N <= max_lag + 1:
        raise UsageError(f"need N > max_lag + 1 (N={N}, max_lag={max_lag})")
    d = e - e.mean()
    var = float(d @ d) / (N - 1)
    if not var > 0.0:
        raise DegenerateTargetError("residual variance is zero")
    R = np.array([float(d[:-k] @ d[k:]) for k in range(1, max_lag + 1)]) / ((N - 1) * var)
    return R, Z_95 / np.sqrt(N)


def input_correlation(e, u) -> float:
    """Pearson correlation of residuals and input over the same window."""
    e = _residuals(e)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != e.shape:
        raise UsageError(f"{e.size} residuals vs {u.size} inputs")
    de, du = e - e.mean(), u - u.mean()
    se, su = float(de @ de), float(du @ du)
    if not (se > 0.0 and su > 0.0):
        raise DegenerateTargetError("zero variance in residuals or input")
    return float(np.clip((de @ du) / np.sqrt(se * su), -1.0, 1.0))


def _ks_normal(samples: np.ndarray) -> np.ndarray:
    """Row-wise KS distance to N(0, 1) after standardizing each row."""
    x = np.atleast_2d(samples)
    n = x.shape[1]
    z = (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, ddof=1, keepdims=True)
    cdf = norm.cdf(np.sort(z, axis=1))
    i = np.arange(1, n + 1)
    return np.maximum((i / n - cdf).max(axis=1), (cdf - (i - 1) / n).max(axis=1))


def lilliefors_statistic(e) -> float:
    e = _residuals(e, 5)
    if not np.std(e) > 0.0:
        raise DegenerateTargetError("residual variance is zero")
    return float(_ks_normal(e)[0])


@functools.lru_cache(maxsize=None)
def lilliefors_critical(
    n: int, alpha: float = 0.05, replicates: int = LILLIEFORS_REPLICATES, seed: int = LILLIEFORS_SEED
) -> float:
    """Upper ``alpha`` quantile of the Lilliefors statistic at sample size ``n``.

    Monte-Carlo over ``replicates`` standard-normal samples drawn from a
    stream keyed on ``(seed, n)``; cached per argument tuple.
    """
    if n < 5 or not 0.0 < alpha < 1.0:
        raise UsageError(f"invalid Lilliefors table request n={n}, alpha={alpha}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
    stats = np.concatenate([_ks_normal(rng.standard_normal((min(2000, replicates - k), n))) for k in range(0, replicates, 2000)])
    return float(np.quantile(stats, 1.0 - alpha))


def lilliefors_table(sizes: Iterable[int], alpha: float = 0.05, replicates: int = LILLIEFORS_REPLICATES, seed: int = LILLIEFORS_SEED) -> Dict[int, float]:
    return {int(n): lilliefors_critical(int(n), alpha, replicates, seed) for n in sizes}


def lilliefors(e, alpha: float = 0.05) -> Tuple[float, bool]:
    """Lilliefors normality test; returns ``(statistic, passed)``."""
    stat = lilliefors_statistic(e)
    return stat, bool(stat < lilliefors_critical(np.size(e), alpha))


def qq_data(e) -> np.ndarray:
    """``(N, 2)`` array of (normal quantile, sorted standardized residual).

    Plotting positions are ``(i - 0.5) / N``; standardization uses the
    sample standard deviation.
    """
    e = _residuals(e)
    N = e.size
    sd = e.std(ddof=1)
    z = np.sort(e - e.mean()) / (sd if sd > 0 else 1.0)
    theo = norm.ppf((np.arange(1, N + 1) - 0.5) / N)
    return np.column_stack([theo, z])


@dataclass(frozen=True, eq=False)
class ResidualReport:
    residuals: np.ndarray = field(repr=False)
    autocorr: np.ndarray
    ci_95: float
    input_corr: float
    lilliefors_stat: float
    lilliefors_pass: bool
    qq_points: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "autocorr": [float(r) for r in self.autocorr],
            "ci_95": float(self.ci_95),
            "input_corr": self.input_corr,
            "lilliefors_stat": self.lilliefors_stat,
            "lilliefors_pass": self.lilliefors_pass,
        }


def residual_report(e, u, max_lag: int = 30, alpha: float = 0.05) -> ResidualReport:
    e = _residuals(e, 5)
    R, ci = autocorrelation(e, max_lag)
    stat, ok = lilliefors(e, alpha)
    return ResidualReport(
        residuals=e, autocorr=R, ci_95=ci, input_corr=input_correlation(e, u), lilliefors_stat=stat, lilliefors_pass=ok, qq_points=qq_data(e)
    )


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Histogram and population moments of one metric over an ensemble."""

    values: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    seeds: Tuple[int, ...] = ()

    @property
    def count(self) -> int:
        return int(self.values.size)

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std}


def _edges(values: np.ndarray, bins) -> np.ndarray:
    if bins is None:
        bins = 30
    if np.ndim(bins) == 0:
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        return np.linspace(lo, hi, int(bins) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise UsageError("bin edges must be strictly increasing")
    return edges


def summarize(values, bins=None, seeds: Sequence[int] = ()) -> EnsembleSummary:
    """Histogram (``bins`` edges or count) plus population mean and std.

    Values outside explicit edges are clipped into the end bins so the
    counts always sum to the member count.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise UsageError("cannot summarize an empty ensemble")
    edges = _edges(x, bins)
    counts, _ = np.histogram(np.clip(x, edges[0], edges[-1]), bins=edges)
    return EnsembleSummary(values=x, edges=edges, counts=counts, mean=float(x.mean()), std=float(x.std()), seeds=tuple(int(s) for s in seeds))


def merge(a: EnsembleSummary, b: EnsembleSummary) -> EnsembleSummary:
    """Combine two summaries on the same bin edges via pooled moments."""
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise UsageError("summaries use different bin edges")
    na, nb = a.count, b.count
    n = na + nb
    mean = (na * a.mean + nb * b.mean) / n
    m2 = na * (a.std ** 2 + (a.mean - mean) ** 2) + nb * (b.std ** 2 + (b.mean - mean) ** 2)
    return EnsembleSummary(
        values=np.concatenate([a.values, b.values]),
        edges=a.edges,
        counts=a.counts + b.counts,
        mean=float(mean),
        std=float(np.sqrt(m2 / n)),
        seeds=a.seeds + b.seeds,
    )


def histogram_rows(summaries: Dict[str, EnsembleSummary]) -> List[Tuple[str, float, float, int]]:
    rows = []
    for name, s in summaries.items():
        for lo, hi, c in zip(s.edges[:-1], s.edges[1:], s.counts):
            rows.append((name, float(lo), float(hi), int(c)))
    return rows


def shared_edges(groups: Iterable, bins: Optional[int] = 30) -> np.ndarray:
    """Equal-width edges covering every value in every group."""
    allv = np.concatenate([np.asarray(g, dtype=float).reshape(-1) for g in groups])
    return _edges(allv, bins)
