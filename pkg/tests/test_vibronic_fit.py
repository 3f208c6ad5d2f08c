import dataclasses
import math

import numpy as np
import pytest
from conftest import E_ZPL, GAMMA_ZPL, synthetic_lineshape, vibronic_params

from qekit.errors import DegenerateData, DegenerateSeries, NonConvergence
from qekit.spectra import Lineshape
from qekit.synth import NoiseModel
from qekit.vibronic import zpl_profile
from qekit.vibronic.fit import VibronicFitConfig, VibronicProblem, fit_temperature_series, fit_vibronic, initial_guess


def relative_jacobian_error(problem, theta, step=1e-6):
    jac = problem.jacobian(theta)
    worst = 0.0
    for k in range(theta.size):
        d = step * max(1.0, abs(theta[k]))
        a, b = theta.copy(), theta.copy()
        a[k] += d
        b[k] -= d
        col = (problem.residuals(a) - problem.residuals(b)) / (2 * d)
        scale = np.max(np.abs(col))
        if scale > 0:
            worst = max(worst, np.max(np.abs(jac[:, k] - col)) / scale)
    return worst


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check_random_points(seed):
    r = np.random.default_rng(seed)
    s_true = r.uniform(0.3, 2.5)
    ls = synthetic_lineshape(vibronic_params(s_true, t=r.uniform(4, 40)))
    cfg = VibronicFitConfig(smoothness=r.choice([0.0, 0.5]), zpl_shape=r.choice(["lorentzian", "gaussian"]))
    e0, g0, s0 = initial_guess(ls, cfg)
    problem = VibronicProblem(ls, 10.0, cfg, 6, e0, g0, float(ls.density.max()) * 1e-3)
    theta = problem.pack(e0 + r.normal(0, 0.3) * g0, g0 * r.uniform(0.7, 1.4), r.uniform(0.3, 2.5),
                         r.uniform(0.5, 2.0) * problem.amp0, r.uniform(0.2, 2.0, problem.n_cells))
    assert relative_jacobian_error(problem, theta) <= 1e-5


@pytest.mark.parametrize("s_true", [0.72, 1.04, 1.70, 2.14])
def test_noiseless_round_trip(s_true):
    fit = fit_vibronic(synthetic_lineshape(vibronic_params(s_true)), VibronicFitConfig(), 4.0)
    assert fit.converged
    assert abs(fit.params.s_hr - s_true) <= 0.02
    assert fit.params.e_zpl == pytest.approx(E_ZPL, abs=1e-6)
    assert fit.params.gamma_zpl == pytest.approx(GAMMA_ZPL, rel=1e-3)


def test_poisson_noise_within_three_sigma():
    ls = synthetic_lineshape(vibronic_params(0.72), NoiseModel("poisson", 1e4, seed=3))
    fit = fit_vibronic(ls, VibronicFitConfig(), 4.0)
    assert fit.converged
    assert abs(fit.params.s_hr - 0.72) <= 3 * fit.s_hr_sigma
    assert 0.3 < fit.chi2_reduced < 3


def test_fit_result_invariants():
    ls = synthetic_lineshape(vibronic_params(1.04), NoiseModel("poisson", 1e4, seed=5))
    fit = fit_vibronic(ls, VibronicFitConfig(), 4.0)
    eig = np.linalg.eigvalsh(fit.covariance)
    assert eig.min() >= -1e-12 * eig.max()
    np.testing.assert_allclose(fit.covariance, fit.covariance.T)
    total = fit.zpl_weight + sum(w for _, w, _ in fit.n_phonon_components)
    assert total == pytest.approx(1.0, abs=1e-6)
    e, s = fit.physical_psf()
    area = np.trapezoid(np.concatenate(([0], s, [0])), np.concatenate(([0], e, [0.2])))
    assert area == pytest.approx(fit.params.s_hr, rel=1e-9)
    report = fit.to_report()
    for key in ("e_zpl_ev", "gamma_zpl_ev", "s_hr", "s_hr_sigma", "temperature_k", "chi2_reduced", "psf", "n_phonon",
                "converged", "iterations"):
        assert key in report


def test_pure_lorentzian_has_no_sideband():
    x = np.linspace(-0.01, 0.45, 2000)
    dens = 1e4 * zpl_profile(x, GAMMA_ZPL) / zpl_profile(0.0, GAMMA_ZPL)
    ls = Lineshape(x, dens, np.sqrt(np.maximum(dens, 1.0)), E_ZPL)
    fit = fit_vibronic(ls, VibronicFitConfig(), 4.0)
    assert fit.params.s_hr <= 0.05
    _, s = fit.physical_psf()
    assert np.all(s <= 0.05 / 0.2)
    assert s.sum() * 0.002 <= 0.05


def test_fit_is_deterministic():
    ls = synthetic_lineshape(vibronic_params(0.72), NoiseModel("poisson", 1e4, seed=9))
    a = fit_vibronic(ls, VibronicFitConfig(), 4.0)
    b = fit_vibronic(ls, VibronicFitConfig(), 4.0)
    assert a.params.s_hr == b.params.s_hr
    np.testing.assert_array_equal(a.params.psf.values, b.params.psf.values)
    np.testing.assert_array_equal(a.covariance, b.covariance)


def test_fixed_gamma_mode():
    ls = synthetic_lineshape(vibronic_params(1.04))
    fit = fit_vibronic(ls, VibronicFitConfig(gamma_mode="fixed", gamma_zpl_ev=GAMMA_ZPL), 4.0)
    assert fit.params.gamma_zpl == GAMMA_ZPL
    assert "gamma_zpl" not in fit.param_names
    assert abs(fit.params.s_hr - 1.04) <= 0.02


def test_degenerate_data():
    ls = synthetic_lineshape(vibronic_params(1.04))
    with pytest.raises(DegenerateData):
        fit_vibronic(ls.window(-0.01, 0.1), VibronicFitConfig(), 4.0)
    sparse = Lineshape(np.linspace(-0.01, 0.3, 40), np.ones(40), np.ones(40), E_ZPL)
    with pytest.raises(DegenerateData):
        fit_vibronic(sparse, VibronicFitConfig(), 4.0)


def test_iteration_limit_raises_with_diagnostics():
    ls = synthetic_lineshape(vibronic_params(1.04), NoiseModel("poisson", 1e4, seed=1))
    with pytest.raises(NonConvergence) as info:
        fit_vibronic(ls, VibronicFitConfig(max_nfev=2), 4.0)
    assert info.value.diagnostics["fit"].converged is False
    relaxed = fit_vibronic(ls, dataclasses.replace(VibronicFitConfig(max_nfev=2), strict=False), 4.0)
    assert relaxed.converged is False


# ---------------------------------------------------------------- temperature series

SERIES_T = (4.0, 10.0, 20.0, 30.0, 40.0)


def series(s_values, seed=21):
    return [(synthetic_lineshape(vibronic_params(s, t=t), NoiseModel("poisson", 1e4, seed=seed), replica=i), t)
            for i, (s, t) in enumerate(zip(s_values, SERIES_T))]


def test_constant_s_series_is_temperature_independent():
    rep = fit_temperature_series(series([0.72] * 5), VibronicFitConfig())
    assert rep.temperature_independent is True
    assert all(abs(z) <= 3 for z in rep.z_scores)
    assert rep.s_mean == pytest.approx(0.72, abs=3 * rep.s_mean_sigma + 1e-3)
    assert rep.to_report()["temperature_independent"] is True


def test_stepped_s_series_is_flagged():
    rep = fit_temperature_series(series(np.linspace(0.5, 2.0, 5)), VibronicFitConfig())
    assert rep.temperature_independent is False
    assert max(abs(z) for z in rep.z_scores) > 3


def test_single_temperature_rejected():
    with pytest.raises(DegenerateSeries):
        fit_temperature_series(series([0.72])[:1], VibronicFitConfig())


def test_failed_element_is_flagged_not_fatal():
    good = series([0.72, 0.72])
    bad = Lineshape(np.linspace(-0.01, 0.05, 40), np.ones(40), np.ones(40), E_ZPL)
    rep = fit_temperature_series(good + [(bad, 30.0)], VibronicFitConfig())
    assert rep.fits[2] is None
    assert rep.errors[2] is not None
    assert rep.temperature_independent is False
    assert math.isfinite(rep.s_mean)
