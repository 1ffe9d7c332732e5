"""Command-line entry point.

``calibrate run`` executes replicated calibration experiments and writes::

    manifest.json        config echo, seed and library versions
    summary.csv          parameter, method, mse, bias, sd, coverage90
    coverage.csv         parameter, rho, cc, m_count (pooled calibration pairs)
    replicate_<k>.json   fitted transform and optimizer report
    draws_<k>.csv        adjusted draws for replicate k (constrained space)
    diagnostics_<k>.csv  calibration pairs behind the coverage diagnostic

``calibrate diagnose replicate_<k>.json`` recomputes the coverage curve from
a saved result and prints PASS/WARN per parameter.

Settings come from an optional INI file (``[run]`` plus ``[model]``
overrides) and are overridden by flags.  ``CAL_LOG`` sets the log level.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import importlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import DEFAULT_GRID, PARITY_BAND, coverage_curve, summary_csv
from .experiments import ReplicateError, method_label, run_experiment
from .models import build_model
from .optimizer import OptimizerConfig
from .pipeline import CalibrationConfig, CalibrationError, dumps, read_pairs_csv, write_text

log = logging.getLogger("scorecal")

MODEL_CHOICES = ("gaussian", "ou1d", "ou2d", "custom")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(message)


@dataclass
class RunConfig:
    model: str = "gaussian"
    m: int = 100
    n: int = 100
    alpha: tuple = (1.0,)
    beta: float = 1.0
    inflate: float = 2.0
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    out: str = "results"
    n_observed: int = 1000
    diagonal_only: bool = False
    penalty: float = 0.0
    include_true: bool = True
    model_overrides: dict = field(default_factory=dict)

    def validate(self) -> RunConfig:
        if self.model not in MODEL_CHOICES:
            raise ConfigError("model", f"must be one of {', '.join(MODEL_CHOICES)}")
        for name in ("m", "n", "replicates", "workers", "n_observed"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.m < 2 or self.n < 2:
            raise ConfigError("m" if self.m < 2 else "n", "must be >= 2")
        if not self.alpha:
            raise ConfigError("alpha", "needs at least one value")
        for a in self.alpha:
            if not 0.0 <= a <= 1.0:
                raise ConfigError("alpha", f"{a} is outside [0, 1]")
        if not 0.0 < self.beta < 2.0:
            raise ConfigError("beta", f"{self.beta} is outside (0, 2)")
        if not self.inflate > 0:
            raise ConfigError("inflate", "must be > 0")
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")
        if self.penalty < 0:
            raise ConfigError("penalty", "must be >= 0")
        if self.model == "custom" and "factory" not in self.model_overrides:
            raise ConfigError("model.factory", "custom models need factory = module:callable")
        return self

    def calibration(self) -> CalibrationConfig:
        return CalibrationConfig(
            n_calibration=self.m,
            n_draws=self.n,
            n_observed_draws=self.n_observed,
            alpha=self.alpha[0],
            beta=self.beta,
            inflation=self.inflate,
            diagonal_only=self.diagonal_only,
            penalty=self.penalty,
            seed=self.seed,
            workers=self.workers,
            optimizer=OptimizerConfig(),
        )

    def echo(self) -> dict:
        """Config as recorded in the manifest; excludes settings that cannot change results."""
        d = dataclasses.asdict(self)
        d.pop("workers")
        d.pop("out")
        d["alpha"] = list(self.alpha)
        return d


_RUN_KEYS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "model_overrides"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_alpha(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(a) for a in text)
    return tuple(float(a) for a in str(text).split(",") if a.strip())


def _coerce(name: str, value):
    default = _RUN_KEYS[name].default
    try:
        if name == "alpha":
            return _parse_alpha(value)
        if isinstance(default, bool):
            return value if isinstance(value, bool) else _parse_bool(str(value))
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def read_config(path) -> RunConfig:
    """Parse an INI file with a ``[run]`` section and optional ``[model]`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError("config", str(exc)) from None
    unknown = set(parser.sections()) - {"run", "model"}
    if unknown:
        raise ConfigError("config", f"unknown section [{sorted(unknown)[0]}]")
    values = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _RUN_KEYS:
                raise ConfigError(f"run.{key}", "unknown key")
            values[key] = _coerce(key, raw)
    overrides = dict(parser.items("model")) if parser.has_section("model") else {}
    return RunConfig(**values, model_overrides=overrides)


def write_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    run = {}
    for name in _RUN_KEYS:
        value = getattr(cfg, name)
        run[name] = ",".join(repr(a) for a in value) if name == "alpha" else str(value)
    parser["run"] = run
    if cfg.model_overrides:
        parser["model"] = {k: str(v) for k, v in cfg.model_overrides.items()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)


def build_spec(cfg: RunConfig):
    overrides = dict(cfg.model_overrides)
    if cfg.model == "custom":
        target = overrides.pop("factory")
        module, _, attr = target.partition(":")
        try:
            factory = getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError, ValueError) as exc:
            raise ConfigError("model.factory", f"cannot load {target!r}: {exc}") from None
        return factory(**overrides)
    approx = overrides.pop("approx", None)
    try:
        model = build_model(cfg.model, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from None
    try:
        return model.spec() if approx is None else model.spec(approx)
    except ValueError as exc:
        raise ConfigError("model.approx", str(exc)) from None


def _manifest(cfg: RunConfig, spec) -> dict:
    return {
        "config": cfg.echo(),
        "seed": cfg.seed,
        "model": spec.name,
        "parameters": list(spec.param_names),
        "methods": ["approx", *(method_label(a) for a in cfg.alpha)]
        + (["true"] if cfg.include_true and spec.true_sampler is not None else []),
        "versions": {
            "scorecal": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def run(cfg: RunConfig) -> int:
    spec = build_spec(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(spec, cfg.calibration(), cfg.replicates, cfg.alpha, cfg.include_true)
    primary = cfg.alpha[0]
    for rep in result.replicates:
        k = rep.index
        rep.adjusted[primary].save(out, f"replicate_{k}", f"draws_{k}.csv", f"diagnostics_{k}.csv")
    write_text(out / "summary.csv", summary_csv(result.summaries()))
    write_text(out / "coverage.csv", result.coverage(primary).to_csv())
    write_text(out / "manifest.json", dumps(_manifest(cfg, spec)))
    return 0


def diagnose(path, out=None, band: float = PARITY_BAND) -> int:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        inputs = path.parent / doc["diagnostics_inputs"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("result", f"cannot read diagnostics inputs from {path}: {exc}") from None
    if not inputs.exists():
        raise ConfigError("diagnostics_inputs", f"missing file {inputs}")
    names, thetas, draws = read_pairs_csv(inputs)
    curve = coverage_curve(thetas, draws, DEFAULT_GRID, names)
    grid = " ".join(f"{r:g}" for r in curve.levels)
    print(f"# coverage diagnostic: M={curve.m_count} band=+/-{band:g}")
    print(f"# grid: {grid}")
    dev = curve.deviation()
    for j, (name, flag) in enumerate(curve.flags(band).items()):
        print(f"{name}: {flag} (max |cc - rho| = {dev[j]:.3f})")
    target = Path(out) if out else path.with_name(path.stem + "_coverage.csv")
    write_text(target, curve.to_csv())
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calibrate", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run replicated calibration experiments")
    r.add_argument("--config", help="INI file with [run] and [model] sections")
    r.add_argument("--model", choices=MODEL_CHOICES)
    r.add_argument("--m", type=int, help="calibration datasets")
    r.add_argument("--n", type=int, help="posterior draws per calibration dataset")
    r.add_argument("--alpha", help="clipping level(s), comma separated; the first is primary")
    r.add_argument("--beta", type=float, help="energy score exponent")
    r.add_argument("--inflate", type=float, help="importance distribution scale factor")
    r.add_argument("--replicates", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    d = sub.add_parser("diagnose", help="coverage diagnostic for a saved result")
    d.add_argument("result", help="replicate_<k>.json written by run")
    d.add_argument("--out", help="coverage CSV path (default: next to the result)")
    return p


def _run_config(args) -> RunConfig:
    cfg = read_config(args.config) if args.config else RunConfig()
    for name in ("model", "m", "n", "alpha", "beta", "inflate", "replicates", "seed", "workers", "out"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, _coerce(name, value))
    return cfg.validate()


def _error(kind: str, **fields) -> None:
    sys.stderr.write(json.dumps({"error": kind, **fields}) + "\n")


def main(argv=None) -> int:
    level = os.environ.get("CAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return run(_run_config(args))
        return diagnose(args.result, args.out)
    except ConfigError as exc:
        _error("config", field=exc.field, message=str(exc))
        return 2
    except ReplicateError as exc:
        _error("runtime", replicate=exc.index, message=str(exc))
        return 1
    except CalibrationError as exc:
        _error("runtime", calibration_index=exc.index, message=str(exc))
        return 1
    except Exception as exc:  # surfaced as a machine-readable record
        _error("runtime", message=f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
