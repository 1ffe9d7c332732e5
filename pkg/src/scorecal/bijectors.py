"""Coordinate-wise maps between constrained and unconstrained parameters.

``forward`` goes constrained -> unconstrained, ``inverse`` the other way.
``log_det_inverse`` is ``log |d inverse / d z|`` summed over coordinates, the
term that turns a constrained density into an unconstrained one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logit


class Identity:
    name = "identity"

    def forward(self, x):
        return np.asarray(x, dtype=float)

    def inverse(self, z):
        return np.asarray(z, dtype=float)

    def log_det_inverse(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))


class Log:
    """Positive reals via ``z = log x``."""

    name = "log"

    def forward(self, x):
        return np.log(x)

    def inverse(self, z):
        return np.exp(z)

    def log_det_inverse(self, z):
        return np.asarray(z, dtype=float)


class Logit:
    """Unit interval via ``z = logit x``."""

    name = "logit"

    def forward(self, x):
        return logit(x)

    def inverse(self, z):
        return expit(z)

    def log_det_inverse(self, z):
        z = np.asarray(z, dtype=float)
        # log(sigmoid(z) * (1 - sigmoid(z))), stable for large |z|
        return -np.logaddexp(0.0, z) - np.logaddexp(0.0, -z)


@dataclass(frozen=True)
class BijectorStack:
    """One bijector per parameter coordinate; acts on the last axis."""

    parts: tuple

    @classmethod
    def of(cls, parts: Sequence) -> BijectorStack:
        return cls(tuple(parts))

    @property
    def dim(self) -> int:
        return len(self.parts)

    def _map(self, fn, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"last axis has size {x.shape[-1]}, expected {self.dim}")
        out = np.empty_like(x)
        for j, b in enumerate(self.parts):
            out[..., j] = getattr(b, fn)(x[..., j])
        return out

    def forward(self, x):
        return self._map("forward", x)

    def inverse(self, z):
        return self._map("inverse", z)

    def log_det_inverse(self, z):
        return self._map("log_det_inverse", z).sum(axis=-1)

    def names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.parts)
