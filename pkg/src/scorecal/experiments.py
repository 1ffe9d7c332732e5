"""Replicated calibration experiments.

Each replicate draws an observed dataset at the model's true parameter,
calibrates its approximate posterior (optionally at several clipping levels
sharing one calibration set) and, when available, samples the exact
posterior for comparison.  Replicate ``k`` uses the stream key
``(seed, k)``, so any subset of replicates can be rerun on its own.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .diagnostics import CoverageCurve, SummaryMetrics, coverage_curve, summarize
from .models.gaussian import ConjugateGaussianModel, gaussian_true_posterior
from .pipeline import (
    CalibrationConfig,
    CalibrationError,
    CalibrationResult,
    ModelSpec,
    _parallel_sample,
    adjust,
    prepare_many,
    stream,
)
from .weights import raw_weights

log = logging.getLogger(__name__)

_DATA, _TRUE = 9, 4
# replicates prepared per pooled sampler call
_GROUP = 20


def method_label(alpha: float) -> str:
    return f"adjust({alpha:g})"


def replicate_key(seed: int, k: int) -> tuple[int, int]:
    return (int(seed), int(k))


def observed_dataset(model: ModelSpec, seed: int, k: int):
    """Observed data for replicate ``k``, simulated at ``model.truth``."""
    if model.truth is None:
        raise ValueError(f"model {model.name!r} has no true parameter to simulate from")
    return model.simulate(np.asarray(model.truth, dtype=float), stream(replicate_key(seed, k), _DATA))


@dataclass
class Replicate:
    index: int
    observed: object
    approx: np.ndarray  # constrained draws
    adjusted: dict[float, CalibrationResult]
    true: np.ndarray | None = None


@dataclass
class ExperimentResult:
    model: ModelSpec
    alphas: tuple[float, ...]
    replicates: list[Replicate] = field(default_factory=list)

    def methods(self) -> dict[str, list[np.ndarray]]:
        runs = {"approx": [r.approx for r in self.replicates]}
        for a in self.alphas:
            runs[method_label(a)] = [r.adjusted[a].adjusted_constrained() for r in self.replicates]
        if all(r.true is not None for r in self.replicates):
            runs["true"] = [r.true for r in self.replicates]
        return runs

    def summaries(self) -> dict[str, SummaryMetrics]:
        names = self.model.param_names
        return {m: summarize(runs, self.model.truth, names) for m, runs in self.methods().items()}

    def coverage(self, alpha: float | None = None) -> CoverageCurve:
        """Calibration coverage pooled over every replicate's calibration pairs."""
        alpha = self.alphas[0] if alpha is None else alpha
        pairs = [r.adjusted[alpha].diagnostic_pairs() for r in self.replicates]
        thetas = np.concatenate([p[0] for p in pairs])
        draws = np.concatenate([p[1] for p in pairs])
        return coverage_curve(thetas, draws, names=self.model.param_names)


def run_experiment(
    model: ModelSpec,
    cfg: CalibrationConfig,
    replicates: int = 100,
    alphas: Sequence[float] = (1.0,),
    include_true: bool = True,
    indices: Sequence[int] | None = None,
) -> ExperimentResult:
    """Run replicate calibrations.

    Parameters
    ----------
    model : ModelSpec
    cfg : CalibrationConfig
        ``cfg.alpha`` is ignored in favour of ``alphas``; ``cfg.seed`` is the
        experiment seed.
    replicates : int
        Number of replicates, indexed ``0 .. replicates - 1``.
    alphas : sequence of float
        Clipping levels; all share each replicate's calibration set.
    include_true : bool
        Also sample the exact posterior when the model provides one.
    indices : sequence of int, optional
        Run only these replicate indices.
    """
    alphas = tuple(float(a) for a in alphas)
    if not alphas:
        raise ValueError("need at least one alpha")
    idx = list(range(replicates)) if indices is None else [int(i) for i in indices]
    include_true = include_true and model.true_sampler is not None
    out = ExperimentResult(model, alphas)
    for start in range(0, len(idx), _GROUP):
        group = idx[start : start + _GROUP]
        keys = [replicate_key(cfg.seed, k) for k in group]
        observed = [observed_dataset(model, cfg.seed, k) for k in group]
        try:
            prepared = prepare_many(model, observed, cfg, keys)
            true = _true_draws(model, observed, keys, cfg) if include_true else [None] * len(group)
        except CalibrationError as exc:
            k = group[exc.position] if exc.position is not None else group[0]
            raise ReplicateError(k, exc) from exc
        for k, key, y, (approx, imp, calib), t in zip(group, keys, observed, prepared, true):
            try:
                adjusted = {a: adjust(model, imp, calib, approx, cfg, alpha=a, key=key) for a in alphas}
            except Exception as exc:
                raise ReplicateError(k, exc) from exc
            out.replicates.append(
                Replicate(k, y, model.bijector.inverse(approx), adjusted, t)
            )
        log.info("finished replicates %d..%d", group[0], group[-1])
    return out


class ReplicateError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        self.index = index
        super().__init__(f"replicate {index} failed: {cause}")


def _true_draws(model: ModelSpec, observed, keys, cfg: CalibrationConfig):
    blocks = math.ceil(cfg.n_observed_draws / cfg.n_draws)
    ys = [y for y in observed for _ in range(blocks)]
    rngs = [stream(key, _TRUE, b) for key in keys for b in range(blocks)]
    draws = _parallel_sample(model.sample_true, ys, cfg.n_draws, rngs, cfg.workers)
    draws = draws.reshape(len(observed), blocks * cfg.n_draws, -1)[:, : cfg.n_observed_draws]
    return [model.bijector.inverse(d) for d in draws]


def unit_weight_error(
    sizes: Sequence[int] = (10, 100, 1000),
    pairs: int = 500,
    seed: int = 0,
    model: ConjugateGaussianModel = ConjugateGaussianModel(),
    importance: tuple[float, float] = (1.0, 0.5),
) -> dict[int, float]:
    """Mean ``|1 - w|`` when the stabiliser cancels the ratio at the estimate.

    Pairs ``(theta, y)`` come from a Gaussian importance distribution and the
    conjugate model with ``n`` observations.  The weight is
    ``[prior / importance](theta) * [importance / prior](theta_hat(y))`` with
    ``theta_hat`` the exact posterior mean, so it tends to one as ``theta_hat``
    concentrates on ``theta``.
    """
    loc, scale = importance
    log_prior = lambda th: stats.norm.logpdf(th[0], model.mu0, model.sigma0)  # noqa: E731
    log_imp = lambda th: stats.norm.logpdf(th[0], loc, scale)  # noqa: E731
    out = {}
    for n in sizes:
        sized = ConjugateGaussianModel(n=n, sigma=model.sigma, mu0=model.mu0, sigma0=model.sigma0)
        rng = np.random.default_rng([seed, n])
        thetas = loc + scale * rng.standard_normal((pairs, 1))
        data = [sized.simulate(th, rng) for th in thetas]

        def stabilizer(y, sized=sized):
            est = np.array([gaussian_true_posterior(y, sized)[0]])
            return math.exp(log_imp(est) - log_prior(est))

        w = raw_weights(log_prior, log_imp, thetas, data, stabilizer)
        out[n] = float(np.mean(np.abs(1.0 - w)))
    return out
