"""Ornstein-Uhlenbeck benchmark models.

The state at time ``T`` started from ``x0`` is Gaussian with mean
``mu + (x0 - mu) exp(-gamma T)`` and variance ``(D / gamma)(1 - exp(-2 gamma T))``
where ``D = sigma^2 / 2``.  The univariate model's surrogate replaces this by
the stationary law N(mu, D / gamma).  The bivariate model observes
``(X1, rho X1 + (1 - rho) X2)`` for two independent OU states and uses a
mean-field Gaussian fitted to exact-posterior draws as its surrogate.

Posteriors are sampled in unconstrained coordinates ``(mu, log D[, logit rho])``
with adaptive random-walk Metropolis, many datasets at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from ..bijectors import BijectorStack, Identity, Log, Logit
from .mcmc import RWMConfig, rwm_sample_batch

_LOG_2PI = math.log(2.0 * math.pi)
# chains per sampler call; bounds the pre-drawn innovation arrays
_CHUNK = 512


@dataclass(frozen=True)
class OUModel:
    x0: float = 10.0
    mu: float = 1.0
    gamma: float = 2.0
    sigma2: float = 20.0
    T: float = 1.0
    n: int = 100
    prior_mu_sd: float = 10.0
    prior_D_rate: float = 0.1
    burn_in: int = 1000
    thin: int = 10

    def __post_init__(self):
        if not (self.gamma > 0 and self.sigma2 > 0 and self.T > 0):
            raise ValueError("gamma, sigma2 and T must be positive")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not (self.prior_mu_sd > 0 and self.prior_D_rate > 0):
            raise ValueError("prior scales must be positive")

    param_names = ("mu", "D")

    @property
    def D(self) -> float:
        return self.sigma2 / 2.0

    def rwm(self, n_draws: int) -> RWMConfig:
        return RWMConfig.for_draws(n_draws, burn_in=self.burn_in, thin=self.thin)

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        mu, D = np.asarray(theta, dtype=float)[:2]
        mean, var = transition_moments(self, mu, D)
        return mean + math.sqrt(var) * rng.standard_normal(self.n)

    def spec(self, approx: str = "limiting"):
        """Pipeline view; ``approx="exact"`` samples the true posterior for both."""
        from ..pipeline import ModelSpec

        if approx not in ("limiting", "exact"):
            raise ValueError(f"unknown approximation {approx!r}")
        exact_batch = _chunked(lambda ys, n, rngs: _ou1d_batch(self, ys, n, rngs, exact=True))
        approx_batch = exact_batch if approx == "exact" else _chunked(
            lambda ys, n, rngs: _ou1d_batch(self, ys, n, rngs, exact=False)
        )

        def approx_logpdf(z, y):
            y = np.asarray(y, dtype=float)
            stats = (np.array([y.size]), np.array([y.sum()]), np.array([(y**2).sum()]))
            return float(_ou1d_log_post(self, np.atleast_2d(z), stats, exact=approx == "exact")[0])

        return ModelSpec(
            name="ou1d",
            param_names=self.param_names,
            bijector=BijectorStack.of([Identity(), Log()]),
            log_prior=lambda th: _log_prior_mu_D(self, th[0], th[1]),
            simulate=self.simulate,
            approx_sampler=_single(approx_batch),
            approx_sampler_batch=approx_batch,
            true_sampler=_single(exact_batch),
            true_sampler_batch=exact_batch,
            approx_log_density=approx_logpdf,
            truth=np.array([self.mu, self.D]),
        )


@dataclass(frozen=True)
class BivariateOUModel(OUModel):
    x0: float = 5.0
    rho: float = 0.5

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    param_names = ("mu", "D", "rho")

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        mu, D, rho = np.asarray(theta, dtype=float)[:3]
        return bivariate_ou_simulate(self, (mu, D, rho), self.n, rng)

    def spec(self, approx: str = "meanfield"):
        from ..pipeline import ModelSpec

        if approx not in ("meanfield", "exact"):
            raise ValueError(f"unknown approximation {approx!r}")
        exact_batch = _chunked(lambda ys, n, rngs: _ou2d_batch(self, ys, n, rngs))
        if approx == "exact":
            approx_batch = exact_batch
        else:
            approx_batch = _chunked(lambda ys, n, rngs: _ou2d_meanfield_batch(self, ys, n, rngs))
        return ModelSpec(
            name="ou2d",
            param_names=self.param_names,
            bijector=BijectorStack.of([Identity(), Log(), Logit()]),
            log_prior=lambda th: _log_prior_mu_D(self, th[0], th[1])
            + (0.0 if 0.0 <= th[2] <= 1.0 else -np.inf),
            simulate=self.simulate,
            approx_sampler=_single(approx_batch),
            approx_sampler_batch=approx_batch,
            true_sampler=_single(exact_batch),
            true_sampler_batch=exact_batch,
            truth=np.array([self.mu, self.D, self.rho]),
        )


# -- densities ----------------------------------------------------------------


def transition_moments(model: OUModel, mu, D):
    """Mean and variance of the state at ``T`` given ``x0``."""
    decay = math.exp(-model.gamma * model.T)
    mean = mu + (model.x0 - mu) * decay
    var = D / model.gamma * (1.0 - decay**2)
    return mean, var


def limiting_moments(model: OUModel, mu, D):
    return mu, D / model.gamma


def _normal_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


def ou_transition_logpdf(x: float, model: OUModel, mu: float, D: float) -> float:
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    return _normal_logpdf(x, *transition_moments(model, mu, D))


def ou_limiting_logpdf(x: float, model: OUModel, mu: float, D: float) -> float:
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    return _normal_logpdf(x, *limiting_moments(model, mu, D))


def _gauss_loglik(n, s1, s2, mean, var):
    # sum of N(mean, var) log densities from count, sum and sum of squares
    sq = s2 - 2.0 * mean * s1 + n * mean**2
    return -0.5 * (n * (_LOG_2PI + np.log(var)) + sq / var)


def _log_prior_mu_D(model: OUModel, mu, D):
    if not D > 0:
        return -np.inf
    return float(
        _normal_logpdf(mu, 0.0, model.prior_mu_sd**2) + math.log(model.prior_D_rate) - model.prior_D_rate * D
    )


def _log_prior_z(model: OUModel, mu, log_d):
    # prior on (mu, log D) including the Jacobian of D = exp(log D)
    rate = model.prior_D_rate
    return (
        -0.5 * (_LOG_2PI + 2 * math.log(model.prior_mu_sd) + (mu / model.prior_mu_sd) ** 2)
        + math.log(rate)
        - rate * np.exp(log_d)
        + log_d
    )


def _ou1d_log_post(model: OUModel, z, stats, exact: bool):
    mu, log_d = z[:, 0], z[:, 1]
    d = np.exp(log_d)
    mean, var = transition_moments(model, mu, d) if exact else limiting_moments(model, mu, d)
    ll = _gauss_loglik(*stats, mean, var)
    out = ll + _log_prior_z(model, mu, log_d)
    return np.where(np.isfinite(out), out, -np.inf)


def _ou2d_stats(datasets):
    y = np.stack([np.asarray(v, dtype=float) for v in datasets])  # (K, n, 2)
    a, b = y[..., 0], y[..., 1]
    return (
        np.full(y.shape[0], y.shape[1], dtype=float),
        a.sum(1), b.sum(1), (a * a).sum(1), (b * b).sum(1), (a * b).sum(1),
    )


def _ou2d_log_post(model: BivariateOUModel, z, stats):
    n, s1, s2, s11, s22, s12 = stats
    mu, log_d, w = z[:, 0], z[:, 1], z[:, 2]
    rho = expit(w)
    log_1m = -np.logaddexp(0.0, w)  # log(1 - rho)
    one_m = np.exp(log_1m)
    mean, var = transition_moments(model, mu, np.exp(log_d))
    # recover the second latent component: X2 = (Y2 - rho Y1) / (1 - rho)
    x2_sum = (s2 - rho * s1) / one_m
    x2_sq = (s22 - 2 * rho * s12 + rho**2 * s11) / one_m**2
    ll = _gauss_loglik(n, s1, s11, mean, var) + _gauss_loglik(n, x2_sum, x2_sq, mean, var) - n * log_1m
    log_jac_rho = -np.logaddexp(0.0, w) - np.logaddexp(0.0, -w)
    out = ll + _log_prior_z(model, mu, log_d) + log_jac_rho
    return np.where(np.isfinite(out), out, -np.inf)


# -- samplers -----------------------------------------------------------------


def _chunked(batch: Callable) -> Callable:
    def run(datasets, n_draws, rngs):
        datasets, rngs = list(datasets), list(rngs)
        if len(datasets) != len(rngs):
            raise ValueError("need one generator per dataset")
        parts = [
            batch(datasets[i : i + _CHUNK], n_draws, rngs[i : i + _CHUNK])
            for i in range(0, len(datasets), _CHUNK)
        ]
        return np.concatenate(parts, axis=0)

    return run


def _single(batch: Callable) -> Callable:
    return lambda y, n_draws, rng: batch([y], n_draws, [rng])[0]


def _ou1d_inits(model: OUModel, x, exact: bool):
    mean, var = x.mean(1), x.var(1)
    decay = math.exp(-model.gamma * model.T)
    if exact:
        mu = (mean - model.x0 * decay) / (1.0 - decay)
        d = model.gamma * var / (1.0 - decay**2)
    else:
        mu, d = mean, model.gamma * var
    return np.column_stack([mu, np.log(np.maximum(d, 1e-3))])


def _ou1d_batch(model: OUModel, datasets, n_draws, rngs, exact: bool):
    x = np.stack([np.asarray(y, dtype=float) for y in datasets])
    stats = (float(x.shape[1]), x.sum(1), (x**2).sum(1))
    return rwm_sample_batch(
        lambda z: _ou1d_log_post(model, z, stats, exact),
        _ou1d_inits(model, x, exact),
        model.rwm(n_draws),
        rngs,
    )


def _ou2d_inits(model: BivariateOUModel, stats):
    n, s1, s2, s11, s22, s12 = stats
    m1, m2 = s1 / n, s2 / n
    v1 = np.maximum(s11 / n - m1**2, 1e-6)
    rho = np.clip((s12 / n - m1 * m2) / v1, 0.05, 0.95)
    decay = math.exp(-model.gamma * model.T)
    mu = ((m1 + m2) / 2 - model.x0 * decay) / (1.0 - decay)
    d = model.gamma * v1 / (1.0 - decay**2)
    return np.column_stack([mu, np.log(np.maximum(d, 1e-3)), np.log(rho / (1 - rho))])


def _ou2d_batch(model: BivariateOUModel, datasets, n_draws, rngs):
    stats = _ou2d_stats(datasets)
    return rwm_sample_batch(
        lambda z: _ou2d_log_post(model, z, stats),
        _ou2d_inits(model, stats),
        model.rwm(n_draws),
        rngs,
    )


def _ou2d_meanfield_batch(model: BivariateOUModel, datasets, n_draws, rngs):
    # fit on exact-posterior draws, then sample the fit with the same stream
    fit_draws = _ou2d_batch(model, datasets, max(n_draws, 100), rngs)
    return np.stack([meanfield_surrogate(f).sample(n_draws, r) for f, r in zip(fit_draws, rngs)])


@dataclass(frozen=True)
class MeanFieldGaussian:
    """Independent Gaussian coordinates."""

    mean: np.ndarray
    sd: np.ndarray

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal((n, self.mean.size))

    def logpdf(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(np.sum(-0.5 * (_LOG_2PI + 2 * np.log(self.sd) + ((z - self.mean) / self.sd) ** 2)))


def meanfield_surrogate(true_draws) -> MeanFieldGaussian:
    """Moment-match independent Gaussians to each coordinate of ``true_draws``."""
    draws = np.asarray(true_draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 10:
        raise ValueError(f"need at least 10 draws to fit the surrogate, got {draws.shape[0]}")
    sd = draws.std(axis=0, ddof=1)
    flat = np.flatnonzero(~(sd > 0))
    if flat.size:
        raise ValueError(f"coordinate {flat[0]} has zero variance")
    return MeanFieldGaussian(draws.mean(axis=0), sd)


def bivariate_ou_simulate(model: BivariateOUModel, params, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` pairs ``(X1, rho X1 + (1 - rho) X2)`` of independent OU states."""
    mu, D, rho = (float(p) for p in params)
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    mean, var = transition_moments(model, mu, D)
    x = mean + math.sqrt(var) * rng.standard_normal((n, 2))
    return np.column_stack([x[:, 0], rho * x[:, 0] + (1.0 - rho) * x[:, 1]])
