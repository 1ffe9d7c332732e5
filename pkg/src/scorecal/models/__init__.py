"""Benchmark models and the shared sampler."""
from __future__ import annotations

import csv
import dataclasses

import numpy as np

from .gaussian import ConjugateGaussianModel, gaussian_approx_posterior, gaussian_true_posterior
from .mcmc import RWMConfig, accept_probability, rwm_sample, rwm_sample_batch
from .ou import (
    BivariateOUModel,
    OUModel,
    bivariate_ou_simulate,
    meanfield_surrogate,
    ou_limiting_logpdf,
    ou_transition_logpdf,
)

MODELS = {
    "gaussian": ConjugateGaussianModel,
    "ou1d": OUModel,
    "ou2d": BivariateOUModel,
}


def build_model(name: str, **overrides):
    """Instantiate a named benchmark model with field overrides.

    Override values are coerced to the type of the field's default, so
    strings read from a config file work.
    """
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in overrides.items():
        if key not in fields:
            raise ValueError(f"model {name!r} has no field {key!r}")
        kind = type(fields[key].default)
        kwargs[key] = kind(value) if not isinstance(value, kind) else value
    return cls(**kwargs)


def save_dataset(path, data) -> None:
    """One row per realization, one column per observed component."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"y{j + 1}" for j in range(data.shape[1])])
        w.writerows([[repr(float(v)) for v in row] for row in data])


def load_dataset(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0] if data.shape[1] == 1 else data


__all__ = [
    "MODELS",
    "BivariateOUModel",
    "ConjugateGaussianModel",
    "OUModel",
    "RWMConfig",
    "accept_probability",
    "bivariate_ou_simulate",
    "build_model",
    "gaussian_approx_posterior",
    "gaussian_true_posterior",
    "load_dataset",
    "meanfield_surrogate",
    "ou_limiting_logpdf",
    "ou_transition_logpdf",
    "rwm_sample",
    "rwm_sample_batch",
    "save_dataset",
]
