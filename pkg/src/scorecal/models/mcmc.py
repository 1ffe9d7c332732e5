"""Adaptive random-walk Metropolis for small smooth targets.

During burn-in the proposal covariance is learned from the chain history
(scaled by 2.38^2 / d) and a global log-scale is tuned by Robbins-Monro toward
a target acceptance rate.  Adaptation is frozen after burn-in, so the kept
draws come from a fixed Metropolis kernel.

``rwm_sample_batch`` advances K independent chains in lock-step.  Every chain
pre-draws its own innovations from its own generator, so a chain's output does
not depend on which other chains share its batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_COV_START = 200
_COV_EVERY = 50


@dataclass(frozen=True)
class RWMConfig:
    iterations: int = 4000
    burn_in: int = 2000
    thin: int = 20
    initial_scale: float = 0.1
    target_accept: float = 0.3

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not (self.initial_scale > 0 and np.isfinite(self.initial_scale)):
            raise ValueError("initial_scale must be positive; a zero-scale proposal never moves")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    @classmethod
    def for_draws(cls, n: int, burn_in: int = 2000, thin: int = 20, **kw) -> RWMConfig:
        """Configuration whose chain yields exactly ``n`` kept draws."""
        return cls(iterations=burn_in + n * thin, burn_in=burn_in, thin=thin, **kw)


def accept_probability(log_current: float, log_proposed: float) -> float:
    """Metropolis acceptance probability for a symmetric proposal."""
    if np.isnan(log_proposed):
        return 0.0
    return float(min(1.0, np.exp(min(0.0, log_proposed - log_current))))


def _cholesky(cov):
    """Batched Cholesky that tolerates individual failures."""
    try:
        return np.linalg.cholesky(cov), np.ones(cov.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    out = np.zeros_like(cov)
    ok = np.zeros(cov.shape[0], dtype=bool)
    for i, c in enumerate(cov):
        try:
            out[i] = np.linalg.cholesky(c)
            ok[i] = True
        except np.linalg.LinAlgError:
            pass
    return out, ok


@dataclass
class ChainInfo:
    acceptance: np.ndarray
    scale: np.ndarray


def rwm_sample_batch(
    log_target: Callable[[np.ndarray], np.ndarray],
    inits,
    cfg: RWMConfig,
    rngs: Sequence[np.random.Generator],
    return_info: bool = False,
):
    """Run K chains at once.

    Parameters
    ----------
    log_target : callable
        Maps a (K, d) array of states (row k belongs to chain k) to K log
        densities.  Non-finite values are treated as zero density.
    inits : array_like, shape (K, d)
    cfg : RWMConfig
    rngs : sequence of K generators

    Returns
    -------
    draws : ndarray, shape (K, cfg.n_draws, d)
    info : ChainInfo, only if ``return_info``
    """
    x = np.array(inits, dtype=float, ndmin=2)
    k, d = x.shape
    if len(rngs) != k:
        raise ValueError(f"{k} chains but {len(rngs)} generators")
    lp = np.asarray(log_target(x), dtype=float)
    bad = np.flatnonzero(~np.isfinite(lp))
    if bad.size:
        raise ValueError(f"log target is not finite at the initial state of chain {bad[0]}")

    n_iter = cfg.iterations
    z = np.stack([r.standard_normal((n_iter, d)) for r in rngs])
    log_u = np.log(np.stack([r.random(n_iter) for r in rngs]))

    chol = np.broadcast_to(np.eye(d), (k, d, d)).copy()
    log_s = np.full(k, np.log(cfg.initial_scale))
    cov_scale = 2.38**2 / d
    mean = x.copy()
    m2 = np.zeros((k, d, d))
    n_seen = 1

    out = np.empty((k, cfg.n_draws, d))
    kept = 0
    accepted = np.zeros(k)
    for t in range(n_iter):
        step = np.exp(log_s)[:, None, None] * chol
        prop = x + (step * z[:, t, None, :]).sum(axis=-1)
        lp_prop = np.asarray(log_target(prop), dtype=float)
        acc = log_u[:, t] < np.where(np.isnan(lp_prop), -np.inf, lp_prop) - lp
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lp_prop, lp)

        if t < cfg.burn_in:
            gain = (t + 1.0) ** -0.6
            log_s += gain * (acc - cfg.target_accept)
            n_seen += 1
            delta = x - mean
            mean += delta / n_seen
            m2 += delta[:, :, None] * (x - mean)[:, None, :]
            if t >= _COV_START and t % _COV_EVERY == 0:
                cov = m2 / (n_seen - 1)
                jitter = 1e-10 * (np.trace(cov, axis1=1, axis2=2) / d + 1e-12)
                cov = cov_scale * cov + jitter[:, None, None] * np.eye(d)
                new, ok = _cholesky(cov)
                chol = np.where(ok[:, None, None], new, chol)
                if t == _COV_START:
                    # the learned covariance already carries the scale
                    log_s[ok] = 0.0
        else:
            accepted += acc
            if (t - cfg.burn_in + 1) % cfg.thin == 0:
                out[:, kept] = x
                kept += 1

    if return_info:
        post = max(n_iter - cfg.burn_in, 1)
        return out, ChainInfo(accepted / post, np.exp(log_s))
    return out


def rwm_sample(
    log_target: Callable[[np.ndarray], float],
    init,
    cfg: RWMConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Single-chain adaptive random-walk Metropolis; returns (n_draws, d)."""
    init = np.atleast_1d(np.asarray(init, dtype=float))

    def batched(xs):
        return np.array([log_target(xs[0])], dtype=float)

    return rwm_sample_batch(batched, init[None, :], cfg, [rng])[0]
