"""Calibration coverage and replicate summary metrics.

Intervals are equal-tailed and use numpy's linear quantile interpolation.
A parameter value on an interval end-point counts as covered.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
PARITY_BAND = 0.1


def credible_interval(draws, rho: float) -> tuple[float, float]:
    """Equal-tailed ``rho`` credible interval of one-dimensional draws."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 1 or draws.size < 2:
        raise ValueError("need a 1-D array of at least two draws")
    tail = (1.0 - rho) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail])
    return float(lo), float(hi)


def _intervals(draws, levels):
    # draws (M, N, d) -> lo, hi with shape (G, M, d)
    levels = np.asarray(levels, dtype=float)
    tails = (1.0 - levels) / 2.0
    lo = np.quantile(draws, tails, axis=1)
    hi = np.quantile(draws, 1.0 - tails, axis=1)
    return lo, hi


@dataclass
class CoverageCurve:
    """Marginal calibration coverage per parameter.

    ``cc[j, g]`` is the fraction of the ``m_count`` pairs whose ``levels[g]``
    interval for parameter ``j`` contains the generating value.
    """

    names: tuple[str, ...]
    levels: np.ndarray
    cc: np.ndarray
    m_count: int

    def deviation(self) -> np.ndarray:
        """Largest absolute gap ``|cc - rho|`` per parameter."""
        return np.max(np.abs(self.cc - self.levels[None, :]), axis=1)

    def flags(self, band: float = PARITY_BAND) -> dict[str, str]:
        dev = self.deviation()
        return {n: ("PASS" if dev[j] <= band else "WARN") for j, n in enumerate(self.names)}

    def rows(self):
        for j, name in enumerate(self.names):
            for g, rho in enumerate(self.levels):
                yield name, float(rho), float(self.cc[j, g]), self.m_count

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "rho", "cc", "m_count"])
        for name, rho, cc, m in self.rows():
            w.writerow([name, _fmt(rho), _fmt(cc), m])
        return buf.getvalue()


def coverage_curve(
    thetas,
    draws,
    levels: Sequence[float] = DEFAULT_GRID,
    names: Sequence[str] | None = None,
) -> CoverageCurve:
    """Estimate CC(rho) from calibration pairs.

    Parameters
    ----------
    thetas : array_like, shape (M, d)
        Generating parameter of each calibration dataset.
    draws : array_like, shape (M, N, d)
        Adjusted posterior draws for each calibration dataset.
    levels : sequence of float
        Strictly increasing nominal levels in (0, 1).
    names : sequence of str, optional
    """
    thetas = np.asarray(thetas, dtype=float)
    draws = np.asarray(draws, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    if draws.ndim == 2:
        draws = draws[:, :, None]
    if thetas.shape[0] == 0:
        raise ValueError("no calibration pairs")
    if draws.shape[0] != thetas.shape[0] or draws.shape[2] != thetas.shape[1]:
        raise ValueError(f"shape mismatch: thetas {thetas.shape}, draws {draws.shape}")
    levels = np.asarray(levels, dtype=float)
    if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing inside (0, 1)")
    m, _, d = draws.shape
    if m < 10:
        warnings.warn(f"coverage estimated from only {m} pairs", stacklevel=2)
    if names is None:
        names = tuple(f"theta{j}" for j in range(d))
    lo, hi = _intervals(draws, levels)
    inside = (lo <= thetas[None]) & (thetas[None] <= hi)
    cc = inside.mean(axis=1).T
    return CoverageCurve(tuple(names), levels, cc, m)


@dataclass
class SummaryMetrics:
    """Replicate-averaged metrics per parameter for one method."""

    names: tuple[str, ...]
    mse: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    coverage90: np.ndarray
    correlation: np.ndarray | None = None
    correlation_sd: np.ndarray | None = None

    def rows(self, method: str):
        for j, name in enumerate(self.names):
            yield name, method, self.mse[j], self.bias[j], self.sd[j], self.coverage90[j]


def summarize(runs: Sequence[np.ndarray], truth, names: Sequence[str] | None = None) -> SummaryMetrics:
    """Average MSE, bias, SD and 90% coverage over replicate posteriors.

    Parameters
    ----------
    runs : sequence of arrays, each (J, d)
        Posterior draws from each replicate dataset.
    truth : array_like, shape (d,)
        Data-generating parameter, shared by all replicates.
    """
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    d = truth.size
    per = []
    corrs = []
    for k, draws in enumerate(runs):
        draws = np.asarray(draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        if draws.shape[1] != d:
            raise ValueError(f"run {k} has {draws.shape[1]} parameters, truth has {d}")
        if draws.shape[0] < 2:
            raise ValueError(f"run {k} has fewer than two draws")
        err = draws - truth
        cover = []
        for j in range(d):
            lo, hi = credible_interval(draws[:, j], 0.9)
            cover.append(lo <= truth[j] <= hi)
        per.append(
            (
                np.mean(err**2, axis=0),
                err.mean(axis=0),
                draws.std(axis=0, ddof=1),
                np.array(cover, dtype=float),
            )
        )
        if d > 1:
            corrs.append(np.corrcoef(draws, rowvar=False))
    if not per:
        raise ValueError("no runs to summarize")
    mse, bias, sd, cov = (np.mean([p[i] for p in per], axis=0) for i in range(4))
    if names is None:
        names = tuple(f"theta{j}" for j in range(d))
    corr = corr_sd = None
    if corrs:
        corr = np.mean(corrs, axis=0)
        corr_sd = np.std(corrs, axis=0, ddof=1) if len(corrs) > 1 else np.zeros_like(corr)
    return SummaryMetrics(tuple(names), mse, bias, sd, cov, corr, corr_sd)


def _fmt(x) -> str:
    return repr(float(x))


SUMMARY_HEADER = ("parameter", "method", "mse", "bias", "sd", "coverage90")


def summary_csv(tables: dict[str, SummaryMetrics]) -> str:
    """Render ``{method: metrics}`` as the summary CSV, parameters outermost."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    methods = list(tables)
    names = tables[methods[0]].names
    for j, name in enumerate(names):
        for method in methods:
            m = tables[method]
            w.writerow([name, method, _fmt(m.mse[j]), _fmt(m.bias[j]), _fmt(m.sd[j]), _fmt(m.coverage90[j])])
    return buf.getvalue()
