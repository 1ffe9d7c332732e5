"""Conjugate Gaussian model with a deliberately perturbed approximate posterior.

Data are ``n`` draws from N(mu, sigma^2) with ``sigma`` known and a
N(mu0, sigma0^2) prior on ``mu``.  The approximate posterior shifts and
shrinks the exact one by a random error that is a deterministic function of
the dataset, so the same data always give the same approximation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..bijectors import BijectorStack, Identity


def dataset_seed(data, salt: int = 0) -> int:
    """Stable 64-bit seed derived from the bytes of a dataset."""
    raw = np.ascontiguousarray(np.asarray(data, dtype=np.float64)).tobytes()
    digest = hashlib.sha256(raw + int(salt).to_bytes(8, "little", signed=True)).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ConjugateGaussianModel:
    n: int = 10
    sigma: float = 1.0
    mu0: float = 0.0
    sigma0: float = 4.0
    true_mu: float = 1.0
    error_mu_mean: float = 0.5
    error_mu_sd: float = 0.025
    error_sigma_mean: float = 1.5
    error_sigma_sd: float = 0.025
    perturb_seed: int = 0

    def __post_init__(self):
        if not (self.sigma > 0 and self.sigma0 > 0):
            raise ValueError("sigma and sigma0 must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    param_names = ("mu",)

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        mu = float(np.atleast_1d(theta)[0])
        return mu + self.sigma * rng.standard_normal(self.n)

    def perturbation(self, data) -> tuple[float, float]:
        rng = np.random.default_rng(dataset_seed(data, self.perturb_seed))
        return perturbation_draw(rng, self)

    def approx_posterior(self, data) -> tuple[float, float]:
        return gaussian_approx_posterior(
            gaussian_true_posterior(data, self), self.perturbation(data)
        )

    def spec(self, approx: str = "perturbed"):
        """Pipeline view of the model.

        ``approx="exact"`` makes the approximate sampler the exact posterior,
        the well-specified null case.
        """
        from ..pipeline import ModelSpec

        if approx not in ("perturbed", "exact"):
            raise ValueError(f"unknown approximation {approx!r}")
        post = self.approx_posterior if approx == "perturbed" else (
            lambda y: gaussian_true_posterior(y, self)
        )

        def sampler(y, n_draws, rng):
            m, s = post(y)
            return m + s * rng.standard_normal((n_draws, 1))

        def true_sampler(y, n_draws, rng):
            m, s = gaussian_true_posterior(y, self)
            return m + s * rng.standard_normal((n_draws, 1))

        def approx_logpdf(z, y):
            m, s = post(y)
            return float(stats.norm.logpdf(z[0], m, s))

        return ModelSpec(
            name="gaussian",
            param_names=self.param_names,
            bijector=BijectorStack.of([Identity()]),
            log_prior=lambda th: float(stats.norm.logpdf(th[0], self.mu0, self.sigma0)),
            simulate=self.simulate,
            approx_sampler=sampler,
            true_sampler=true_sampler,
            approx_log_density=approx_logpdf,
            truth=np.array([self.true_mu]),
        )


def gaussian_true_posterior(data, model: ConjugateGaussianModel) -> tuple[float, float]:
    """Exact posterior mean and SD of ``mu``."""
    data = np.atleast_1d(np.asarray(data, dtype=float))
    n = data.size
    if n < 1:
        raise ValueError("need at least one observation")
    precision = model.sigma0**-2 + n * model.sigma**-2
    var = 1.0 / precision
    mean = var * (model.mu0 / model.sigma0**2 + data.sum() / model.sigma**2)
    return float(mean), float(np.sqrt(var))


def perturbation_draw(rng: np.random.Generator, model: ConjugateGaussianModel) -> tuple[float, float]:
    """One (mu_error, sigma_error) pair; sigma_error is folded normal."""
    mu_err = model.error_mu_mean + model.error_mu_sd * rng.standard_normal()
    sigma_err = abs(model.error_sigma_mean + model.error_sigma_sd * rng.standard_normal())
    return float(mu_err), float(sigma_err)


def gaussian_approx_posterior(
    true_post, errors, model: ConjugateGaussianModel | None = None
) -> tuple[float, float]:
    """Perturb an exact posterior: ``((mean - mu_err) / s_err, sd / s_err)``.

    ``errors`` is either a ``(mu_err, s_err)`` pair or a generator from which
    the pair is drawn using the error distributions of ``model``.
    """
    mean, sd = true_post
    if isinstance(errors, np.random.Generator):
        errors = perturbation_draw(errors, model or ConjugateGaussianModel())
    mu_err, sigma_err = errors
    return (mean - mu_err) / sigma_err, sd / sigma_err
