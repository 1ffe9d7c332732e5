"""Bayesian score calibration, end to end.

Steps, all in unconstrained parameter coordinates:

1. draw calibration parameters from the scale-inflated approximate posterior
   of the observed data;
2. simulate one dataset per calibration parameter;
3. weight each calibration pair (unit weights unless ``alpha < 1``);
4. sample the approximate posterior of every simulated dataset;
5. fit the moment-correcting transform by maximising the weighted score;
6. push the observed approximate posterior through the fitted transform.

Randomness is split into independent streams keyed by ``(seed, stage, index)``
so results do not depend on how the per-dataset work is scheduled.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .bijectors import BijectorStack
from .diagnostics import DEFAULT_GRID, CoverageCurve, coverage_curve
from .optimizer import OptimizerConfig, OptimizerReport, maximize
from .score import ScoreConfig
from .transform import MomentTransform, PenaltyConfig, embed, pushforward_batch
from .weights import Stabilizer, calibration_weights, raw_weights

log = logging.getLogger(__name__)

# stream tags for np.random.default_rng([seed, tag, index])
_IMPORTANCE, _DATASET, _PERMUTATION, _OBSERVED = 0, 1, 2, 3


class CalibrationError(RuntimeError):
    """A simulation or sampling step failed for one calibration dataset."""

    position: int | None = None  # which observed dataset, for pooled preparation

    def __init__(self, index: int, theta, cause: BaseException):
        self.index = index
        self.theta = np.asarray(theta)
        super().__init__(f"calibration dataset {index} failed at theta={self.theta.tolist()}: {cause}")


def stream(key, tag: int, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(key, tag, index)``.

    ``key`` is the run seed or a tuple such as ``(seed, replicate)``.
    """
    return np.random.default_rng([*(int(k) for k in np.atleast_1d(key)), tag, index])


@dataclass(frozen=True)
class ModelSpec:
    """Everything the pipeline needs to know about a model.

    Parameters
    ----------
    log_prior : callable
        Prior log density in the constrained space.
    simulate : callable
        ``(theta_constrained, rng) -> dataset``.
    approx_sampler : callable
        ``(dataset, n, rng) -> (n, d)`` approximate posterior draws in
        unconstrained coordinates.
    approx_sampler_batch : callable, optional
        ``(datasets, n, rngs) -> (K, n, d)``.  Must produce exactly what
        ``approx_sampler`` would for each dataset and generator.
    true_sampler, true_sampler_batch : callable, optional
        Same contract for the exact posterior, when it is available.
    approx_log_density : callable, optional
        ``(z, dataset) -> log density`` of the approximate posterior up to a
        constant.  Used only for importance weights when ``alpha < 1``.
    """

    name: str
    param_names: tuple[str, ...]
    bijector: BijectorStack
    log_prior: Callable[[np.ndarray], float]
    simulate: Callable[[np.ndarray, np.random.Generator], Any]
    approx_sampler: Callable[[Any, int, np.random.Generator], np.ndarray]
    approx_sampler_batch: Callable | None = None
    true_sampler: Callable | None = None
    true_sampler_batch: Callable | None = None
    approx_log_density: Callable | None = None
    truth: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def log_prior_unconstrained(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.log_prior(self.bijector.inverse(z)) + self.bijector.log_det_inverse(z))

    def sample_approx(self, datasets, n, rngs) -> np.ndarray:
        return _sample(self.approx_sampler, self.approx_sampler_batch, datasets, n, rngs)

    def sample_true(self, datasets, n, rngs) -> np.ndarray:
        if self.true_sampler is None:
            raise ValueError(f"model {self.name!r} has no exact posterior sampler")
        return _sample(self.true_sampler, self.true_sampler_batch, datasets, n, rngs)


def _sample(single, batch, datasets, n, rngs):
    if batch is not None:
        return np.asarray(batch(list(datasets), n, list(rngs)), dtype=float)
    return np.stack([np.asarray(single(y, n, r), dtype=float) for y, r in zip(datasets, rngs)])


@dataclass(frozen=True)
class CalibrationConfig:
    """Run settings; defaults follow the reference experiments.

    ``inflation`` is a scalar or per-coordinate diagonal of D.  ``subset``
    restricts the correction to the listed coordinates, ``diagonal_only``
    corrects each coordinate separately.
    """

    n_calibration: int = 100
    n_draws: int = 100
    n_observed_draws: int = 1000
    alpha: float = 1.0
    beta: float = 1.0
    inflation: float | tuple = 2.0
    diagonal_only: bool = False
    subset: tuple[int, ...] | None = None
    penalty: float = 0.0
    exact_unit_weights: bool = True
    seed: int = 0
    workers: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.n_calibration < 2 or self.n_draws < 2:
            raise ValueError("need at least 2 calibration datasets and 2 draws each")
        if self.n_observed_draws < 2:
            raise ValueError("need at least 2 observed draws")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.beta < 2.0:
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")
        if np.any(np.asarray(self.inflation, dtype=float) <= 0):
            raise ValueError("inflation must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class ImportanceDistribution:
    """Approximate posterior draws scaled about their mean by ``inflation``."""

    base: np.ndarray
    inflation: np.ndarray
    center: np.ndarray = None
    log_base_density: Callable[[np.ndarray], float] | None = None

    def __post_init__(self):
        self.base = np.atleast_2d(np.asarray(self.base, dtype=float))
        d = self.base.shape[1]
        self.inflation = np.broadcast_to(np.asarray(self.inflation, dtype=float), (d,)).copy()
        if np.any(self.inflation <= 0):
            raise ValueError("inflation entries must be positive")
        if self.center is None:
            self.center = self.base.mean(axis=0)
        if self.log_base_density is None:
            self.log_base_density = _gaussian_logpdf(self.base)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return sample_importance(self.base, self.inflation, m, rng, self.center)

    def log_density(self, theta) -> float:
        """Log density of the inflated distribution, up to the base's constant."""
        theta = np.asarray(theta, dtype=float)
        pre = (theta - self.center) / self.inflation + self.center
        return float(self.log_base_density(pre) - np.sum(np.log(self.inflation)))


def _gaussian_logpdf(draws):
    mean = draws.mean(axis=0)
    cov = np.atleast_2d(np.cov(draws, rowvar=False))
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))

    def logpdf(x):
        r = np.linalg.solve(chol, np.asarray(x, dtype=float) - mean)
        return -0.5 * (r @ r + logdet + r.size * math.log(2 * math.pi))

    return logpdf


def sample_importance(base, inflation, m: int, rng: np.random.Generator, center=None) -> np.ndarray:
    """Draw ``m`` rows of ``base`` and map them to ``D (theta - mu) + mu``.

    Rows are taken without replacement when ``m`` does not exceed the number
    of base draws, otherwise with replacement (logged).
    """
    base = np.atleast_2d(np.asarray(base, dtype=float))
    d = base.shape[1]
    inflation = np.broadcast_to(np.asarray(inflation, dtype=float), (d,))
    if np.any(inflation <= 0):
        raise ValueError("inflation entries must be positive")
    if center is None:
        center = base.mean(axis=0)
    replace = m > base.shape[0]
    if replace:
        log.info("resampling %d importance draws from %d base draws with replacement", m, base.shape[0])
    rows = rng.choice(base.shape[0], size=m, replace=replace)
    return inflation * (base[rows] - center) + center


@dataclass
class CalibrationSet:
    """Calibration parameters, simulated data and approximate posteriors."""

    thetas: np.ndarray
    datasets: list
    draws: np.ndarray
    centers: np.ndarray

    @property
    def size(self) -> int:
        return self.thetas.shape[0]

    def restrict(self, indices) -> CalibrationSet:
        idx = np.asarray(indices, dtype=np.intp)
        return CalibrationSet(
            self.thetas[:, idx], self.datasets, self.draws[:, :, idx], self.centers[:, idx]
        )


def _chunks(n: int, k: int) -> list[range]:
    k = max(1, min(k, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _simulate_chunk(model: ModelSpec, thetas, seed, idx: range):
    rngs = [stream(seed, _DATASET, m) for m in idx]
    datasets = []
    for m, rng in zip(idx, rngs):
        try:
            datasets.append(model.simulate(model.bijector.inverse(thetas[m]), rng))
        except Exception as exc:
            raise CalibrationError(m, thetas[m], exc) from exc
    return datasets, rngs


def _approx_chunk(model: ModelSpec, thetas, datasets, rngs, n: int, idx: range):
    try:
        draws = model.sample_approx(datasets, n, rngs)
    except Exception:
        # find the first failing dataset with the single-dataset sampler
        for m, y in zip(idx, datasets):
            try:
                model.approx_sampler(y, n, np.random.default_rng(m))
            except Exception as exc:
                raise CalibrationError(m, thetas[m], exc) from exc
        raise
    bad = ~np.all(np.isfinite(draws), axis=(1, 2))
    if bad.any():
        m = idx[int(np.flatnonzero(bad)[0])]
        raise CalibrationError(m, thetas[m], ValueError("non-finite approximate posterior draws"))
    return draws


def build_calibration_set(
    model: ModelSpec,
    imp: ImportanceDistribution,
    m: int,
    n: int,
    seed,
    workers: int = 1,
) -> CalibrationSet:
    """Steps 1, 2 and 4: calibration parameters, datasets and posteriors."""
    if m < 2 or n < 2:
        raise ValueError("need M >= 2 calibration datasets and N >= 2 draws")
    thetas = imp.sample(m, stream(seed, _IMPORTANCE))

    def work(idx):
        datasets, rngs = _simulate_chunk(model, thetas, seed, idx)
        return datasets, _approx_chunk(model, thetas, datasets, rngs, n, idx)

    chunks = _chunks(m, workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    datasets = [y for p in parts for y in p[0]]
    draws = np.concatenate([p[1] for p in parts], axis=0)
    return CalibrationSet(thetas, datasets, draws, draws.mean(axis=1))


def sample_observed(model: ModelSpec, observed, n_total: int, chain_size: int, seed, kind: str = "approx"):
    """Posterior draws for the observed data, as independent blocks.

    Draws are produced in blocks of ``chain_size`` (one sampler call each,
    with its own stream) and truncated to ``n_total``.
    """
    blocks = math.ceil(n_total / chain_size)
    tag = _OBSERVED if kind == "approx" else _OBSERVED + 1
    rngs = [stream(seed, tag, b) for b in range(blocks)]
    sampler = model.sample_approx if kind == "approx" else model.sample_true
    draws = sampler([observed] * blocks, chain_size, rngs)
    return draws.reshape(-1, draws.shape[-1])[:n_total]


@dataclass
class CalibrationResult:
    """Fitted transform plus everything needed to report and diagnose it.

    Draw arrays are stored in unconstrained coordinates; use the
    ``*_constrained`` helpers for reporting.
    """

    model_name: str
    param_names: tuple[str, ...]
    bijector: BijectorStack
    alpha: float
    transform: MomentTransform
    report: OptimizerReport
    approx_draws: np.ndarray
    adjusted_draws: np.ndarray
    calibration_thetas: np.ndarray
    calibration_adjusted: np.ndarray
    weights: np.ndarray

    def adjusted_constrained(self) -> np.ndarray:
        return self.bijector.inverse(self.adjusted_draws)

    def approx_constrained(self) -> np.ndarray:
        return self.bijector.inverse(self.approx_draws)

    def diagnostic_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(theta_bar, adjusted calibration draws) in constrained coordinates."""
        return (
            self.bijector.inverse(self.calibration_thetas),
            self.bijector.inverse(self.calibration_adjusted),
        )

    def coverage(self, levels=DEFAULT_GRID) -> CoverageCurve:
        thetas, draws = self.diagnostic_pairs()
        return coverage_curve(thetas, draws, levels, self.param_names)

    def to_dict(self, diagnostics_path: str, draws_path: str) -> dict:
        return {
            "model": self.model_name,
            "parameters": list(self.param_names),
            "alpha": self.alpha,
            "transform": self.transform.to_dict(),
            "optimizer": self.report.to_dict(),
            "diagnostics_inputs": diagnostics_path,
            "adjusted_draws": draws_path,
        }

    def save(self, directory, stem: str, draws_name: str | None = None, diag_name: str | None = None) -> Path:
        """Write ``<stem>.json`` with its two CSV companions; returns the JSON path.

        Paths inside the JSON are relative to ``directory``.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        diag_name = diag_name or f"{stem}_diagnostics.csv"
        draws_name = draws_name or f"{stem}_draws.csv"
        write_text(directory / draws_name, draws_csv(self.adjusted_constrained(), self.param_names))
        thetas, draws = self.diagnostic_pairs()
        write_text(directory / diag_name, pairs_csv(thetas, draws, self.param_names))
        path = directory / f"{stem}.json"
        write_text(path, dumps(self.to_dict(diag_name, draws_name)))
        return path


def fit_transform(
    calib: CalibrationSet,
    weights,
    cfg: CalibrationConfig,
    key=None,
) -> tuple[MomentTransform, OptimizerReport]:
    """Step 5, honouring ``subset`` and ``diagonal_only``."""
    key = cfg.seed if key is None else key
    d = calib.thetas.shape[1]
    idx = tuple(range(d)) if cfg.subset is None else tuple(cfg.subset)
    sub = calib if len(idx) == d and cfg.subset is None else calib.restrict(idx)
    score_cfg = ScoreConfig.random(calib.draws.shape[1], stream(key, _PERMUTATION), cfg.beta)
    t, report = maximize(
        sub,
        weights,
        score_cfg,
        PenaltyConfig(cfg.penalty),
        cfg.optimizer,
        diagonal_only=cfg.diagonal_only,
    )
    if len(idx) != d:
        t = embed(t, idx, d)
    return t, report


def importance_for(model: ModelSpec, observed, base_draws, cfg: CalibrationConfig) -> ImportanceDistribution:
    logpdf = None
    if model.approx_log_density is not None:
        logpdf = lambda z: model.approx_log_density(z, observed)  # noqa: E731
    return ImportanceDistribution(base_draws, np.asarray(cfg.inflation, dtype=float), log_base_density=logpdf)


def weights_for(
    model: ModelSpec,
    imp: ImportanceDistribution,
    calib: CalibrationSet,
    alpha: float,
    stabilizer: Stabilizer | None = None,
    exact_units: bool = True,
) -> np.ndarray:
    """Step 3: prior-to-importance ratios times ``v``, clipped at ``alpha``."""
    return calibration_weights(
        alpha,
        calib.size,
        raw=lambda: raw_weights(
            model.log_prior_unconstrained, imp.log_density, calib.thetas, calib.datasets, stabilizer
        ),
        exact_units=exact_units and stabilizer is None,
    )


def adjust(
    model: ModelSpec,
    imp: ImportanceDistribution,
    calib: CalibrationSet,
    approx_draws: np.ndarray,
    cfg: CalibrationConfig,
    alpha: float | None = None,
    stabilizer: Stabilizer | None = None,
    key=None,
) -> CalibrationResult:
    """Steps 3, 5 and 6 for a prepared calibration set."""
    alpha = cfg.alpha if alpha is None else alpha
    w = weights_for(model, imp, calib, alpha, stabilizer, cfg.exact_unit_weights)
    t, report = fit_transform(calib, w, cfg, key)
    adjusted = pushforward_batch(t, approx_draws[None], approx_draws.mean(axis=0)[None])[0]
    calib_adjusted = pushforward_batch(t, calib.draws, calib.centers)
    return CalibrationResult(
        model_name=model.name,
        param_names=model.param_names,
        bijector=model.bijector,
        alpha=alpha,
        transform=t,
        report=report,
        approx_draws=approx_draws,
        adjusted_draws=adjusted,
        calibration_thetas=calib.thetas,
        calibration_adjusted=calib_adjusted,
        weights=w,
    )


def prepare(model: ModelSpec, observed, cfg: CalibrationConfig, key=None):
    """Steps 1, 2 and 4 for observed data.

    Returns the observed approximate draws, the importance distribution and
    the calibration set.
    """
    key = cfg.seed if key is None else key
    approx = sample_observed(model, observed, cfg.n_observed_draws, cfg.n_draws, key)
    imp = importance_for(model, observed, approx, cfg)
    calib = build_calibration_set(model, imp, cfg.n_calibration, cfg.n_draws, key, cfg.workers)
    return approx, imp, calib


def _parallel_sample(sampler, datasets, n, rngs, workers):
    chunks = _chunks(len(datasets), workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: sampler([datasets[i] for i in c], n, [rngs[i] for i in c]), chunks))
    else:
        parts = [sampler([datasets[i] for i in c], n, [rngs[i] for i in c]) for c in chunks]
    return np.concatenate(parts, axis=0)


def prepare_many(model: ModelSpec, observed: Sequence, cfg: CalibrationConfig, keys: Sequence):
    """:func:`prepare` for several observed datasets at once.

    Sampler calls are pooled across datasets so batched samplers amortise
    their overhead; every chain keeps its own stream, so the output equals
    calling :func:`prepare` on each ``(observed[r], keys[r])``.
    """
    if len(observed) != len(keys):
        raise ValueError("need one key per observed dataset")
    n, blocks = cfg.n_draws, math.ceil(cfg.n_observed_draws / cfg.n_draws)
    ys = [y for y in observed for _ in range(blocks)]
    rngs = [stream(k, _OBSERVED, b) for k in keys for b in range(blocks)]
    draws = _parallel_sample(model.sample_approx, ys, n, rngs, cfg.workers)
    draws = draws.reshape(len(observed), blocks * n, -1)[:, : cfg.n_observed_draws]

    imps, thetas, datasets, rngs = [], [], [], []
    for r, (y, key) in enumerate(zip(observed, keys)):
        imp = importance_for(model, y, draws[r], cfg)
        th = imp.sample(cfg.n_calibration, stream(key, _IMPORTANCE))
        try:
            ds, rs = _simulate_chunk(model, th, key, range(cfg.n_calibration))
        except CalibrationError as exc:
            exc.position = r
            raise
        imps.append(imp)
        thetas.append(th)
        datasets.extend(ds)
        rngs.extend(rs)
    try:
        cal = _parallel_sample(model.sample_approx, datasets, n, rngs, cfg.workers)
    except Exception:
        # rerun per dataset to report which one failed
        for r, key in enumerate(keys):
            try:
                build_calibration_set(model, imps[r], cfg.n_calibration, n, key)
            except CalibrationError as exc:
                exc.position = r
                raise
        raise
    cal = cal.reshape(len(observed), cfg.n_calibration, n, -1)
    out = []
    for r in range(len(observed)):
        if not np.all(np.isfinite(cal[r])):
            m = int(np.flatnonzero(~np.all(np.isfinite(cal[r]), axis=(1, 2)))[0])
            exc = CalibrationError(m, thetas[r][m], ValueError("non-finite approximate posterior draws"))
            exc.position = r
            raise exc
        ds = datasets[r * cfg.n_calibration : (r + 1) * cfg.n_calibration]
        out.append((draws[r], imps[r], CalibrationSet(thetas[r], ds, cal[r], cal[r].mean(axis=1))))
    return out


def calibrate(
    model: ModelSpec,
    observed,
    cfg: CalibrationConfig = CalibrationConfig(),
    stabilizer: Stabilizer | None = None,
) -> CalibrationResult:
    """Calibrate the approximate posterior of ``observed`` (all six steps)."""
    approx, imp, calib = prepare(model, observed, cfg)
    return adjust(model, imp, calib, approx, cfg, stabilizer=stabilizer)


# -- serialisation helpers ---------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def draws_csv(draws, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in np.atleast_2d(draws):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def pairs_csv(thetas, draws, names: Sequence[str]) -> str:
    """Calibration pairs in long form: ``m, role, <params>``.

    ``role`` is ``truth`` for the generating parameter and ``draw`` for each
    adjusted posterior draw.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "role", *names])
    for m, (th, dr) in enumerate(zip(thetas, draws)):
        w.writerow([m, "truth", *(_fmt(v) for v in th)])
        for row in dr:
            w.writerow([m, "draw", *(_fmt(v) for v in row)])
    return buf.getvalue()


def read_pairs_csv(path) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Inverse of :func:`pairs_csv`: names, thetas (M, d), draws (M, N, d)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    names = tuple(rows[0][2:])
    thetas: dict[int, list] = {}
    draws: dict[int, list] = {}
    for row in rows[1:]:
        m, role, vals = int(row[0]), row[1], [float(v) for v in row[2:]]
        (thetas if role == "truth" else draws).setdefault(m, []).append(vals)
    keys = sorted(thetas)
    if not keys or set(keys) != set(draws):
        raise ValueError(f"{path} does not contain matched truth/draw rows")
    th = np.array([thetas[k][0] for k in keys])
    dr = np.array([draws[k] for k in keys])
    return names, th, dr
