"""Energy score estimators computed from posterior samples.

The score is oriented so that larger is better:

    S(U, theta) = 1/2 E||u - u'||^beta - E||u - theta||^beta

Three estimators are provided.  ``energy_score_perm`` pairs each sample with
one partner given by a fixed permutation and is the one used during
calibration.  ``energy_score_oracle`` (all N^2 pairs, diagonal included) and
``energy_score_unbiased`` (the N(N-1) off-diagonal pairs) are brute-force
references used for testing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoreConfig:
    """Exponent and the fixed pairing permutation for the energy score.

    Parameters
    ----------
    beta : float
        Exponent of the Euclidean distance, strictly inside (0, 2).
    permutation : ndarray of int, shape (N,)
        0-based permutation of ``range(N)``. Fixed points are allowed.
    """

    beta: float
    permutation: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")
        perm = np.asarray(self.permutation)
        if perm.ndim != 1 or perm.dtype.kind not in "iu":
            raise ValueError("permutation must be a 1-D integer array")
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("permutation is not a bijection on range(N)")
        object.__setattr__(self, "permutation", perm.astype(np.intp))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, beta: float = 1.0) -> ScoreConfig:
        """Draw a permutation uniformly over all ``n!`` orderings."""
        return cls(beta=beta, permutation=rng.permutation(n))


def _check(samples, theta):
    samples = np.asarray(samples, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    theta = np.atleast_1d(theta)
    if samples.ndim != 2:
        raise ValueError("samples must be an (N, d) array")
    if samples.shape[0] < 2:
        raise ValueError("at least two samples are needed for the pair term")
    if theta.shape != (samples.shape[1],):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({samples.shape[1]},)"
        )
    if not (np.all(np.isfinite(samples)) and np.all(np.isfinite(theta))):
        raise ValueError("samples and theta must be finite")
    return samples, theta


def _norm_pow(x, beta):
    r = np.sqrt(np.sum(x * x, axis=-1))
    return r if beta == 1.0 else r**beta


def energy_score_perm(samples, theta, cfg: ScoreConfig) -> float:
    """Permutation estimator of the energy score.

    Parameters
    ----------
    samples : array_like, shape (N, d) or (N,)
        Draws from the predictive distribution.
    theta : array_like, shape (d,) or scalar
        Observation being scored.
    cfg : ScoreConfig
        ``cfg.permutation`` must have length N.

    Returns
    -------
    float
        ``mean_i(0.5 * ||u_i - u_{k_i}||^beta - ||u_i - theta||^beta)``.
    """
    samples, theta = _check(samples, theta)
    if cfg.permutation.size != samples.shape[0]:
        raise ValueError(
            f"permutation has length {cfg.permutation.size}, "
            f"expected {samples.shape[0]}"
        )
    pair = _norm_pow(samples - samples[cfg.permutation], cfg.beta)
    miss = _norm_pow(samples - theta, cfg.beta)
    return float(np.mean(0.5 * pair - miss))


def energy_score_perm_batch(samples, thetas, cfg: ScoreConfig) -> np.ndarray:
    """Vectorised ``energy_score_perm`` over a stack of sample sets.

    ``samples`` has shape (M, N, d) and ``thetas`` shape (M, d); returns M
    scores.  Inputs are not validated, this is the optimizer's inner loop.
    """
    pair = _norm_pow(samples - samples[:, cfg.permutation], cfg.beta)
    miss = _norm_pow(samples - thetas[:, None, :], cfg.beta)
    return np.mean(0.5 * pair - miss, axis=1)


def _pairwise(samples, beta):
    diff = samples[:, None, :] - samples[None, :, :]
    return _norm_pow(diff, beta)


def energy_score_oracle(samples, theta, beta: float = 1.0) -> float:
    """Full double-sum estimator, diagonal pairs included (V-statistic).

    This is exactly the average of ``energy_score_perm`` over all N!
    permutations, because each partner index is then uniform on ``range(N)``.
    """
    samples, theta = _check(samples, theta)
    n = samples.shape[0]
    pair = _pairwise(samples, beta).sum() / n**2
    return float(0.5 * pair - np.mean(_norm_pow(samples - theta, beta)))


def energy_score_unbiased(samples, theta, beta: float = 1.0) -> float:
    """Off-diagonal (U-statistic) estimator, unbiased for exact draws."""
    samples, theta = _check(samples, theta)
    n = samples.shape[0]
    pair = _pairwise(samples, beta).sum() / (n * (n - 1))
    return float(0.5 * pair - np.mean(_norm_pow(samples - theta, beta)))
