"""Relative moment-correcting affine transform.

A draw ``theta`` from an approximate posterior with mean ``mu_hat`` is mapped
to ``L @ (theta - mu_hat) + mu_hat + b``.  The same ``b`` and ``L`` are shared
by every dataset; only the centering mean is dataset specific.

Optimizer coordinates pack ``b`` first, then the lower triangle of ``L`` row by
row with diagonal entries stored as logarithms.  In diagonal-only mode the
off-diagonal entries are absent and pinned to zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


@dataclass(frozen=True)
class MomentTransform:
    """Shift ``b`` (d,) and lower-triangular scale ``L`` (d, d)."""

    b: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        d = b.size
        if b.ndim != 1 or L.shape != (d, d):
            raise ValueError(f"b has shape {b.shape} but L has shape {L.shape}")
        if np.any(np.triu(L, 1) != 0.0):
            raise ValueError("L must be lower triangular")
        if np.any(np.diag(L) <= 0.0):
            raise ValueError("L must have a strictly positive diagonal")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "L", L)

    @property
    def dim(self) -> int:
        return self.b.size

    @classmethod
    def identity(cls, d: int) -> MomentTransform:
        return cls(np.zeros(d), np.eye(d))

    def to_dict(self) -> dict:
        return {"b": self.b.tolist(), "L": self.L.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> MomentTransform:
        return cls(np.asarray(data["b"], dtype=float), np.asarray(data["L"], dtype=float))


@dataclass(frozen=True)
class PenaltyConfig:
    """Squared shrinkage of ``L`` toward the identity at rate ``lam``."""

    lam: float = 0.0

    def __post_init__(self):
        if not (self.lam >= 0.0 and np.isfinite(self.lam)):
            raise ValueError(f"penalty rate must be a finite value >= 0, got {self.lam}")


def apply(t: MomentTransform, mu_hat, theta) -> np.ndarray:
    """Transform a single parameter vector relative to the centre ``mu_hat``."""
    mu_hat = np.atleast_1d(np.asarray(mu_hat, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if mu_hat.shape != (t.dim,) or theta.shape != (t.dim,):
        raise ValueError(
            f"dimension mismatch: transform is {t.dim}-d, "
            f"mu_hat {mu_hat.shape}, theta {theta.shape}"
        )
    return t.L @ (theta - mu_hat) + mu_hat + t.b


def invert(t: MomentTransform, mu_hat, value) -> np.ndarray:
    """Inverse of :func:`apply` for the same centre."""
    mu_hat = np.atleast_1d(np.asarray(mu_hat, dtype=float))
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return solve_triangular(t.L, value - mu_hat - t.b, lower=True) + mu_hat


def pushforward(t: MomentTransform, draws, center=None) -> np.ndarray:
    """Transform every row of ``draws`` about their empirical mean.

    Parameters
    ----------
    t : MomentTransform
    draws : array_like, shape (N, d)
    center : array_like, shape (d,), optional
        Precomputed empirical mean of ``draws``.

    Returns
    -------
    ndarray, shape (N, d)
        Has mean ``center + b`` and covariance ``L cov(draws) L^T``.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1 and t.dim == 1:
        draws = draws[:, None]
    if draws.ndim != 2 or draws.shape[1] != t.dim:
        raise ValueError(f"draws must be (N, {t.dim}), got {draws.shape}")
    if draws.shape[0] < 2:
        raise ValueError("need at least two draws to define a covariance")
    if center is None:
        center = draws.mean(axis=0)
    # written as a correction to the draws so untouched coordinates stay bit-exact
    return draws + (draws - center) @ (t.L - np.eye(t.dim)).T + t.b


def pushforward_batch(t: MomentTransform, draws, centers) -> np.ndarray:
    """Pushforward of a stack (M, N, d) of draw sets with centres (M, d)."""
    c = centers[:, None, :]
    return draws + (draws - c) @ (t.L - np.eye(t.dim)).T + t.b


def embed(t: MomentTransform, indices, d: int) -> MomentTransform:
    """Lift a transform acting on ``indices`` to ``d`` coordinates.

    Coordinates not listed pass through unchanged.
    """
    idx = np.asarray(indices, dtype=np.intp)
    b = np.zeros(d)
    L = np.eye(d)
    b[idx] = t.b
    L[np.ix_(idx, idx)] = t.L
    return MomentTransform(b, L)


def n_params(d: int, diagonal_only: bool = False) -> int:
    return 2 * d if diagonal_only else d + d * (d + 1) // 2


def pack(t: MomentTransform, diagonal_only: bool = False) -> np.ndarray:
    """Flatten a transform into unconstrained optimizer coordinates."""
    d = t.dim
    if diagonal_only:
        if np.any(t.L[np.tril_indices(d, -1)] != 0.0):
            raise ValueError("transform has off-diagonal terms; cannot pack diagonally")
        return np.concatenate([t.b, np.log(np.diag(t.L))])
    rows, cols = np.tril_indices(d)
    tri = t.L[rows, cols].copy()
    on_diag = rows == cols
    tri[on_diag] = np.log(tri[on_diag])
    return np.concatenate([t.b, tri])


def unpack(params, d: int, diagonal_only: bool = False) -> MomentTransform:
    """Inverse of :func:`pack`; the diagonal is exponentiated so L stays valid."""
    params = np.asarray(params, dtype=float)
    if params.shape != (n_params(d, diagonal_only),):
        raise ValueError(
            f"expected {n_params(d, diagonal_only)} parameters for d={d}, got {params.shape}"
        )
    b = params[:d].copy()
    L = np.zeros((d, d))
    if diagonal_only:
        L[np.diag_indices(d)] = np.exp(params[d:])
    else:
        rows, cols = np.tril_indices(d)
        tri = params[d:].copy()
        on_diag = rows == cols
        tri[on_diag] = np.exp(tri[on_diag])
        L[rows, cols] = tri
    return MomentTransform(b, L)


def penalty(t: MomentTransform, cfg: PenaltyConfig) -> float:
    """``lam * (sum_i (L_ii - 1)^2 + sum_{i>j} L_ij^2)``."""
    if cfg.lam == 0.0:
        return 0.0
    return float(cfg.lam * np.sum((t.L - np.eye(t.dim)) ** 2))
