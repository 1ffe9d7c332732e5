import json

import numpy as np
import pytest

from scorecal.bijectors import BijectorStack, Identity, Log, Logit
from scorecal.models import BivariateOUModel, ConjugateGaussianModel, OUModel
from scorecal.models.gaussian import gaussian_true_posterior
from scorecal.pipeline import (
    CalibrationConfig,
    CalibrationError,
    ImportanceDistribution,
    ModelSpec,
    adjust,
    build_calibration_set,
    calibrate,
    prepare,
    prepare_many,
    read_pairs_csv,
    sample_importance,
)

GAUSS = ConjugateGaussianModel()


def observed(seed=0):
    return GAUSS.simulate([1.0], np.random.default_rng(seed))


def test_sample_importance_examples():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(50, 2))
    centre = base.mean(0)
    out = sample_importance(base, 1.0, 50, np.random.default_rng(1))
    np.testing.assert_allclose(np.sort(out, axis=0), np.sort(base, axis=0), atol=1e-15)
    at_centre = sample_importance(np.tile(centre, (5, 1)), [3.0, 0.5], 5, rng)
    np.testing.assert_allclose(at_centre, np.tile(centre, (5, 1)), atol=1e-15)
    one = sample_importance(np.array([[3.0]]), 2.0, 1, rng, center=np.array([2.0]))
    assert one[0, 0] == 4.0
    with pytest.raises(ValueError):
        sample_importance(base, [1.0, 0.0], 5, rng)


def test_resampling_with_replacement_when_short():
    out = sample_importance(np.arange(3.0)[:, None], 1.0, 10, np.random.default_rng(0))
    assert out.shape == (10, 1)


def test_importance_spread_doubles():
    spec = GAUSS.spec()
    y = observed()
    base = spec.approx_sampler(y, 2000, np.random.default_rng(0))
    imp = ImportanceDistribution(base, 2.0)
    calib = build_calibration_set(spec, imp, 500, 10, seed=3)
    ratio = calib.thetas.std() / base.std()
    assert 1.6 <= ratio <= 2.4


def test_importance_log_density_matches_scaled_gaussian():
    base = np.random.default_rng(0).normal(size=(4000, 1))
    imp = ImportanceDistribution(base, 2.0)
    from scipy import stats

    x = np.array([0.7])
    c = base.mean(0)
    expected = stats.norm.logpdf((x[0] - c[0]) / 2 + c[0], base.mean(), base.std(ddof=1)) - np.log(2)
    assert imp.log_density(x) == pytest.approx(expected, abs=1e-9)


def test_build_calibration_set_is_reproducible_and_finite():
    spec = GAUSS.spec()
    base = spec.approx_sampler(observed(), 500, np.random.default_rng(0))
    imp = ImportanceDistribution(base, 2.0)
    a = build_calibration_set(spec, imp, 100, 100, seed=7)
    b = build_calibration_set(spec, imp, 100, 100, seed=7, workers=3)
    assert np.all(np.isfinite(a.draws))
    np.testing.assert_array_equal(a.thetas, b.thetas)
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.centers, a.draws.mean(1))


def test_failure_reports_index_and_theta():
    spec = GAUSS.spec()

    def simulate(theta, rng):
        if theta[0] > 0.5:
            raise RuntimeError("boom")
        return GAUSS.simulate(theta, rng)

    bad = ModelSpec(**{**spec.__dict__, "simulate": simulate})
    imp = ImportanceDistribution(np.linspace(-1, 2, 40)[:, None], 1.0)
    with pytest.raises(CalibrationError) as info:
        build_calibration_set(bad, imp, 20, 10, seed=0)
    assert info.value.theta[0] > 0.5
    assert f"dataset {info.value.index}" in str(info.value)


def test_simulator_receives_constrained_parameters():
    seen = []
    spec = OUModel().spec()

    def simulate(theta, rng):
        seen.append(np.array(theta))
        return OUModel().simulate(theta, rng)

    s = ModelSpec(**{**spec.__dict__, "simulate": simulate})
    imp = ImportanceDistribution(np.column_stack([np.zeros(10), np.log(np.linspace(5, 15, 10))]), 2.0)
    calib = build_calibration_set(s, imp, 5, 4, seed=0)
    np.testing.assert_allclose(np.array(seen)[:, 1], np.exp(calib.thetas[:, 1]))


def test_bijections_round_trip():
    stack = BijectorStack.of([Identity(), Log(), Logit()])
    x = np.array([[-3.0, 0.2, 0.01], [4.0, 50.0, 0.99]])
    np.testing.assert_allclose(stack.inverse(stack.forward(x)), x, rtol=1e-12)
    z = np.array([0.3, -1.0, 2.0])
    h = 1e-6
    numeric = sum(
        np.log((stack.inverse(z + h * e)[j] - stack.inverse(z - h * e)[j]) / (2 * h))
        for j, e in enumerate(np.eye(3))
    )
    assert stack.log_det_inverse(z) == pytest.approx(numeric, abs=1e-6)


def test_null_case_transform_is_near_identity():
    spec = GAUSS.spec("exact")
    y = observed(5)
    sd = gaussian_true_posterior(y, GAUSS)[1]
    res = calibrate(spec, y, CalibrationConfig(n_calibration=400, seed=2))
    assert np.max(np.abs(res.transform.b)) < 0.1 * sd
    assert np.max(np.abs(res.transform.L - 1)) < 0.15


def test_adjusted_draws_are_pushforward_of_approx():
    res = calibrate(GAUSS.spec(), observed(), CalibrationConfig(n_calibration=30, n_draws=30, seed=1))
    c = res.approx_draws.mean(0)
    expected = res.transform.L @ (res.approx_draws - c).T
    np.testing.assert_allclose(res.adjusted_draws, expected.T + c + res.transform.b, atol=1e-12)


def test_subset_correction_leaves_other_coordinates():
    spec = OUModel(n=30).spec()
    y = OUModel(n=30).simulate([1.0, 10.0], np.random.default_rng(0))
    cfg = CalibrationConfig(n_calibration=20, n_draws=20, n_observed_draws=40, subset=(0,), seed=0)
    res = calibrate(spec, y, cfg)
    np.testing.assert_array_equal(res.adjusted_draws[:, 1], res.approx_draws[:, 1])
    assert res.transform.b[1] == 0.0 and res.transform.L[1, 1] == 1.0 and res.transform.L[1, 0] == 0.0


def test_diagonal_only_has_no_cross_terms():
    spec = OUModel(n=30).spec()
    y = OUModel(n=30).simulate([1.0, 10.0], np.random.default_rng(0))
    cfg = CalibrationConfig(n_calibration=20, n_draws=20, n_observed_draws=40, diagonal_only=True, seed=0)
    assert calibrate(spec, y, cfg).transform.L[1, 0] == 0.0


def test_clipped_weights_path_runs():
    res = calibrate(GAUSS.spec(), observed(), CalibrationConfig(n_calibration=40, n_draws=40, alpha=0.5, seed=0))
    assert res.weights.shape == (40,)
    assert np.ptp(res.weights) > 0


def test_full_pipeline_is_deterministic():
    cfg = CalibrationConfig(n_calibration=25, n_draws=25, seed=9)
    a = calibrate(GAUSS.spec(), observed(), cfg)
    b = calibrate(GAUSS.spec(), observed(), CalibrationConfig(n_calibration=25, n_draws=25, seed=9, workers=4))
    np.testing.assert_array_equal(a.adjusted_draws, b.adjusted_draws)
    assert a.report.trajectory == b.report.trajectory


def test_prepare_many_matches_prepare():
    model = BivariateOUModel(n=20)
    spec = model.spec()
    cfg = CalibrationConfig(n_calibration=6, n_draws=12, n_observed_draws=30, seed=4)
    ys = [model.simulate([1.0, 10.0, 0.5], np.random.default_rng(i)) for i in range(3)]
    keys = [(4, i) for i in range(3)]
    pooled = prepare_many(spec, ys, cfg, keys)
    for y, key, (approx, imp, calib) in zip(ys, keys, pooled):
        a2, _, c2 = prepare(spec, y, cfg, key)
        np.testing.assert_array_equal(approx, a2)
        np.testing.assert_array_equal(calib.draws, c2.draws)
        np.testing.assert_array_equal(calib.thetas, c2.thetas)


def test_save_writes_contract_fields(tmp_path):
    res = calibrate(GAUSS.spec(), observed(), CalibrationConfig(n_calibration=12, n_draws=10, n_observed_draws=20))
    path = res.save(tmp_path, "run")
    doc = json.loads(path.read_text())
    assert set(doc["transform"]) == {"b", "L"}
    assert set(doc["optimizer"]) == {"iterations", "objective", "improved"}
    assert isinstance(doc["optimizer"]["improved"], bool)
    draws = np.loadtxt(tmp_path / doc["adjusted_draws"], delimiter=",", skiprows=1)
    np.testing.assert_allclose(draws, res.adjusted_constrained()[:, 0])
    names, thetas, pair_draws = read_pairs_csv(tmp_path / doc["diagnostics_inputs"])
    assert names == ("mu",)
    np.testing.assert_array_equal(thetas, res.calibration_thetas)
    np.testing.assert_array_equal(pair_draws, res.calibration_adjusted)


def test_config_validation():
    with pytest.raises(ValueError):
        CalibrationConfig(n_calibration=1)
    with pytest.raises(ValueError):
        CalibrationConfig(alpha=1.2)
    with pytest.raises(ValueError):
        CalibrationConfig(beta=2.0)
    with pytest.raises(ValueError):
        CalibrationConfig(inflation=0.0)
