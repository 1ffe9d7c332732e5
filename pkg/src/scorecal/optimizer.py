"""Weighted energy-score objective and its maximisation over transforms."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .score import ScoreConfig, energy_score_perm_batch
from .transform import (
    MomentTransform,
    PenaltyConfig,
    pack,
    penalty,
    pushforward_batch,
    unpack,
)


class NoImprovementWarning(UserWarning):
    """The optimizer never beat the identity transform."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Nelder-Mead settings.

    ``initial_simplex_scale`` is the simplex edge for log-scale and
    off-diagonal coordinates; shift coordinates use it times the average
    posterior SD of that coordinate.  ``restarts`` counts additional runs from
    the best point with a fresh simplex.
    """

    max_iterations: int = 10000
    tol: float = 1e-8
    xtol: float = 1e-6
    initial_simplex_scale: float = 0.5
    restarts: int = 2

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.initial_simplex_scale > 0:
            raise ValueError("initial_simplex_scale must be > 0")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass
class ObjectiveEvaluation:
    params: np.ndarray
    value: float
    per_dataset_scores: np.ndarray


@dataclass
class OptimizerReport:
    iterations: int
    evaluations: int
    objective: float
    initial_objective: float
    improved: bool
    trajectory: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective": self.objective,
            "improved": self.improved,
        }


def _dim(calib) -> int:
    return calib.draws.shape[2]


def objective(
    params,
    calib,
    weights,
    score_cfg: ScoreConfig,
    penalty_cfg: PenaltyConfig = PenaltyConfig(),
    diagonal_only: bool = False,
) -> ObjectiveEvaluation:
    """Evaluate ``sum_m w_m S(pushforward_m, theta_m) - penalty``.

    ``calib`` needs ``draws`` (M, N, d), ``centers`` (M, d) and ``thetas``
    (M, d) attributes.
    """
    params = np.asarray(params, dtype=float)
    t = unpack(params, _dim(calib), diagonal_only)
    pushed = pushforward_batch(t, calib.draws, calib.centers)
    scores = energy_score_perm_batch(pushed, calib.thetas, score_cfg)
    bad = np.flatnonzero(~np.isfinite(scores))
    if bad.size:
        raise FloatingPointError(f"non-finite energy score for calibration dataset {bad[0]}")
    value = float(np.dot(weights, scores) - penalty(t, penalty_cfg))
    return ObjectiveEvaluation(params, value, scores)


def _simplex(x0, calib, cfg: OptimizerConfig, diagonal_only: bool) -> np.ndarray:
    d = _dim(calib)
    steps = np.full(x0.size, cfg.initial_simplex_scale)
    sd = calib.draws.std(axis=1).mean(axis=0)
    steps[:d] = cfg.initial_simplex_scale * np.where(sd > 0, sd, 1.0)
    return np.vstack([x0, x0 + np.diag(steps)])


def maximize(
    calib,
    weights,
    score_cfg: ScoreConfig,
    penalty_cfg: PenaltyConfig = PenaltyConfig(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    diagonal_only: bool = False,
) -> tuple[MomentTransform, OptimizerReport]:
    """Find the transform maximising the weighted objective.

    Starts from the identity and runs Nelder-Mead, restarting from the best
    point found.  If nothing beats the identity, the identity is returned
    and a :class:`NoImprovementWarning` is issued.
    """
    d = _dim(calib)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (calib.draws.shape[0],):
        raise ValueError("need one weight per calibration dataset")
    x0 = pack(MomentTransform.identity(d), diagonal_only)

    trajectory = []
    best = {"x": x0, "f": np.inf}

    def neg(x):
        try:
            f = -objective(x, calib, weights, score_cfg, penalty_cfg, diagonal_only).value
        except (FloatingPointError, ValueError):
            f = np.inf
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(x, copy=True)
        trajectory.append(-best["f"])
        return f

    f0 = neg(x0)
    if not np.isfinite(f0):
        raise FloatingPointError("objective is not finite at the identity transform")

    iterations = 0
    evaluations = 0
    start = x0
    for attempt in range(opt_cfg.restarts + 1):
        before = best["f"]
        res = minimize(
            neg,
            start,
            method="Nelder-Mead",
            options={
                "maxiter": opt_cfg.max_iterations,
                "maxfev": 40 * opt_cfg.max_iterations,
                "xatol": opt_cfg.xtol,
                "fatol": opt_cfg.tol,
                "initial_simplex": _simplex(start, calib, opt_cfg, diagonal_only),
            },
        )
        iterations += int(res.nit)
        evaluations += int(res.nfev)
        start = best["x"]
        if attempt > 0 and before - best["f"] < opt_cfg.tol:
            break

    improved = best["f"] < f0
    if not improved:
        warnings.warn("optimizer did not improve on the identity transform", NoImprovementWarning)
        best["x"], best["f"] = x0, f0
    report = OptimizerReport(
        iterations=iterations,
        evaluations=evaluations,
        objective=float(-best["f"]),
        initial_objective=float(-f0),
        improved=bool(improved),
        trajectory=trajectory,
    )
    return unpack(best["x"], d, diagonal_only), report
