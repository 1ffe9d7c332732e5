import json

import numpy as np
import pytest

from scorecal.cli import RunConfig, main, read_config, write_config

SMALL = ["--m", "12", "--n", "10", "--replicates", "2"]


def run(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", "--model", "gaussian", *SMALL, "--seed", "1", "--out", str(out), *extra])
    return code, out


def test_golden_headers(tmp_path):
    code, out = run(tmp_path, "a")
    assert code == 0
    assert (out / "summary.csv").read_text().splitlines()[0] == "parameter,method,mse,bias,sd,coverage90"
    assert (out / "coverage.csv").read_text().splitlines()[0] == "parameter,rho,cc,m_count"
    assert (out / "draws_0.csv").read_text().splitlines()[0] == "mu"
    assert (out / "diagnostics_1.csv").read_text().splitlines()[0] == "m,role,mu"
    doc = json.loads((out / "replicate_0.json").read_text())
    assert list(doc) == ["adjusted_draws", "alpha", "diagnostics_inputs", "model", "optimizer", "parameters", "transform"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) == {"config", "methods", "model", "parameters", "seed", "versions"}
    assert manifest["methods"] == ["approx", "adjust(1)", "true"]
    for f in out.iterdir():
        assert b"\r\n" not in f.read_bytes()


def test_identical_runs_are_byte_identical_across_workers(tmp_path):
    _, a = run(tmp_path, "a")
    _, b = run(tmp_path, "b", "--workers", "3")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_alpha_labels(tmp_path):
    code, out = run(tmp_path, "a", "--alpha", "0,1")
    assert code == 0
    methods = [ln.split(",")[1] for ln in (out / "summary.csv").read_text().splitlines()[1:]]
    assert methods == ["approx", "adjust(0)", "adjust(1)", "true"]


def test_config_round_trip(tmp_path):
    cfg = RunConfig(model="ou2d", m=50, n=40, alpha=(0.5, 1.0), beta=1.5, inflate=3.0, replicates=7, seed=11,
                    workers=2, out="x", n_observed=300, diagonal_only=True, penalty=0.05,
                    model_overrides={"n": "30", "rho": "0.25"})
    write_config(cfg, tmp_path / "c.ini")
    assert read_config(tmp_path / "c.ini") == cfg
    text = (tmp_path / "c.ini").read_text()
    assert text.startswith("[run]\nmodel = ou2d\n")


def test_flags_override_config(tmp_path):
    (tmp_path / "c.ini").write_text("[run]\nm = 500\nn = 10\nreplicates = 1\n")
    out = tmp_path / "o"
    code = main(["run", "--config", str(tmp_path / "c.ini"), "--m", "8", "--out", str(out)])
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["m"] == 8


@pytest.mark.parametrize(
    "args, field",
    [
        (["--alpha", "1.5"], "alpha"),
        (["--beta", "2"], "beta"),
        (["--inflate", "0"], "inflate"),
        (["--m", "0"], "m"),
        (["--replicates", "0"], "replicates"),
    ],
)
def test_invalid_config_exits_2_with_field(tmp_path, capsys, args, field):
    code = main(["run", "--out", str(tmp_path), *args])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "config" and record["field"] == field


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[run]\nbogus = 1\n")
    assert main(["run", "--config", str(tmp_path / "c.ini")]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "run.bogus"


def test_runtime_failure_exits_1_with_replicate(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[run]\nmodel = custom\nm = 10\nn = 10\nreplicates = 2\n\n[model]\nfactory = custom_models:failing_gaussian\n")
    code = main(["run", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "o")])
    assert code == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "runtime" and record["replicate"] in (0, 1)


def test_diagnose_null_case_passes(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[run]\nmodel = custom\nm = 200\nn = 100\nreplicates = 1\n\n[model]\nfactory = custom_models:exact_gaussian\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(tmp_path / "c.ini"), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["diagnose", str(out / "replicate_0.json")]) == 0
    text = capsys.readouterr().out
    assert "band=+/-0.1" in text and "# grid: 0.05 0.1" in text
    assert "mu: PASS" in text
    assert (out / "replicate_0_coverage.csv").read_text().startswith("parameter,rho,cc,m_count\n")


def test_diagnose_flags_shifted_draws(tmp_path, capsys):
    _, out = run(tmp_path, "a")
    diag = out / "diagnostics_0.csv"
    lines = diag.read_text().splitlines()
    shifted = [lines[0]] + [
        ",".join([*ln.split(",")[:2], repr(float(ln.split(",")[2]) + (100.0 if ln.split(",")[1] == "draw" else 0.0))])
        for ln in lines[1:]
    ]
    diag.write_text("\n".join(shifted) + "\n")
    capsys.readouterr()
    assert main(["diagnose", str(out / "replicate_0.json"), "--out", str(tmp_path / "cc.csv")]) == 0
    assert "mu: WARN" in capsys.readouterr().out
    cc = np.loadtxt(tmp_path / "cc.csv", delimiter=",", skiprows=1, usecols=2)
    assert np.all(cc == 0.0)


def test_diagnose_missing_inputs(tmp_path, capsys):
    _, out = run(tmp_path, "a")
    (out / "diagnostics_0.csv").unlink()
    assert main(["diagnose", str(out / "replicate_0.json")]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "diagnostics_inputs"
