"""Importance weights for calibration datasets.

A calibration pair (theta, y) drawn from the importance distribution gets
weight ``w = r(theta) * v(y)`` with ``r = prior / importance`` and ``v`` an
optional stabilizing function of the simulated data.  Heavy weights are
tamed by clipping at an empirical quantile; clipping everything (alpha = 1)
is the unit-weight scheme used by default.

Quantiles use numpy's default linear interpolation between order statistics.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Stabilizer = Callable[[object], float]


def _validate(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("weights are all zero")
    return w


def raw_weights(
    log_prior: Callable[[np.ndarray], float],
    log_importance: Callable[[np.ndarray], float],
    thetas,
    datasets: Sequence | None = None,
    stabilizer: Stabilizer | None = None,
) -> np.ndarray:
    """Unclipped weights ``exp(log_prior - log_importance) * v(y)``.

    Both log densities must be expressed in the same coordinates as
    ``thetas`` (the unconstrained space in the pipeline) so that Jacobian
    terms are accounted for consistently.

    Parameters
    ----------
    log_prior, log_importance : callable
        Map a parameter vector to a log density (normalisation is irrelevant
        to clipping and to the optimizer's argmax).
    thetas : array_like, shape (M, d)
    datasets : sequence of length M, optional
        Only needed when a stabilizer is given.
    stabilizer : callable, optional
        ``v(y) >= 0``; ``None`` means ``v = 1``.

    Raises
    ------
    ValueError
        If a log density is not finite or ``v`` is negative, naming the index.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    log_r = np.empty(thetas.shape[0])
    for m, th in enumerate(thetas):
        lp = float(log_prior(th))
        lq = float(log_importance(th))
        if not (np.isfinite(lp) and np.isfinite(lq)):
            raise ValueError(
                f"non-finite log density at calibration index {m}: "
                f"log_prior={lp}, log_importance={lq}"
            )
        log_r[m] = lp - lq
    w = np.exp(log_r - log_r.max()) if np.max(log_r) > 700 else np.exp(log_r)
    if stabilizer is not None:
        if datasets is None or len(datasets) != len(w):
            raise ValueError("stabilizer needs one dataset per calibration parameter")
        v = np.array([float(stabilizer(y)) for y in datasets])
        bad = np.flatnonzero(~np.isfinite(v) | (v < 0))
        if bad.size:
            raise ValueError(f"stabilizer returned invalid value at index {bad[0]}: {v[bad[0]]}")
        w = w * v
    return _validate(w)


def clip(w, alpha: float) -> np.ndarray:
    """Cap weights at their empirical ``(1 - alpha)`` quantile.

    ``alpha = 0`` leaves ``w`` unchanged and ``alpha = 1`` clips every weight
    to ``min(w)``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    w = _validate(w)
    cap = np.quantile(w, 1.0 - alpha)
    return np.minimum(w, cap)


def unit_weights(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one weight")
    return np.ones(m)


def normalize(w) -> np.ndarray:
    w = _validate(w)
    return w / w.sum()


def calibration_weights(
    alpha: float,
    m: int,
    raw: Callable[[], np.ndarray] | None = None,
    exact_units: bool = True,
) -> np.ndarray:
    """Weights as used by the pipeline.

    With ``alpha == 1`` and ``exact_units`` the raw weights are never
    computed and a vector of ones is returned; otherwise ``raw()`` is
    evaluated and clipped.
    """
    if alpha == 1.0 and exact_units:
        return unit_weights(m)
    if raw is None:
        raise ValueError("raw weights are required when alpha < 1")
    return clip(raw(), alpha)
