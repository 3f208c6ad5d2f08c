import math
import time

import numpy as np
import pytest
from scipy.stats import qmc

from qekit.errors import (
    AllZeroIntensity,
    InsufficientSpan,
    IrfExceedsRaw,
    NegativeWidthInput,
    NoPeakFound,
    NonPositiveInput,
    UnnormalizedHistogram,
)
from qekit.photophysics import (
    add_irf,
    correct_irf,
    fit_g2,
    fit_lifetime,
    fit_peak,
    fit_power_broadening,
    fit_saturation,
    fit_temperature_broadening,
    g2_model,
    lifetime_model,
    power_broadening_model,
    radiative_lifetime,
    saturation_model,
)
from qekit.spectra import ENERGY, Spectrum
from qekit.synth import NoiseModel, gen_scalar_dataset

UEV = 1e-6
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def rows(model, truth, x, noise=NoiseModel(), replica=0):
    ds = gen_scalar_dataset(model, truth, x, noise, replica)
    return ds.rows, ds.truth


def lorentz_spectrum(center=1.567, fwhm=148 * UEV, amp=1e4, base=100.0, noise=NoiseModel(), replica=0, extra=None):
    e = np.linspace(center - 3e-3, center + 3e-3, 601)
    hw = fwhm / 2
    y = base + amp * hw * hw / ((e - center) ** 2 + hw * hw)
    if extra is not None:
        y = y + extra(e)
    counts, sigma = noise.apply(y, replica)
    if noise.kind == "none":
        sigma = np.sqrt(y)
    return Spectrum(ENERGY, e, counts, sigma)


# ---------------------------------------------------------------- IRF correction


@pytest.mark.parametrize("raw, corrected", [(148.0, 104.0), (279.0, 235.0), (55.1, 11.1)])
def test_irf_pairs(raw, corrected):
    assert round(correct_irf(raw * UEV, 44.0 * UEV, "linear") / UEV, 1) == corrected


def test_irf_quadrature():
    assert correct_irf(5.0, 4.0, "quadrature") == pytest.approx(3.0, abs=1e-15)


def test_irf_exceeds_raw():
    with pytest.raises(IrfExceedsRaw):
        correct_irf(40 * UEV, 44 * UEV)


@pytest.mark.parametrize("method", ["linear", "quadrature"])
def test_irf_composition_identity(method, rng):
    for raw in rng.uniform(50, 500, 20) * UEV:
        assert add_irf(correct_irf(raw, 44 * UEV, method), 44 * UEV, method) == pytest.approx(raw, rel=1e-12)


# ---------------------------------------------------------------- peaks


def test_lorentzian_peak_148_uev():
    fit = fit_peak(lorentz_spectrum(), "lorentzian")
    assert fit.fwhm_raw == pytest.approx(148 * UEV, rel=1e-3)
    assert fit.center == pytest.approx(1.567, abs=1e-9)
    fit = fit_peak(lorentz_spectrum(), "lorentzian", irf_fwhm=44 * UEV)
    assert fit.fwhm_irf_corrected == pytest.approx(104 * UEV, rel=1e-3)
    assert fit.fwhm_irf_corrected <= fit.fwhm_raw


def test_gaussian_sigma_fwhm_relation():
    e = np.linspace(1.5, 1.6, 501)
    y = 50 + 1e4 * np.exp(-0.5 * ((e - 1.55) / 0.004) ** 2)
    fit = fit_peak(Spectrum(ENERGY, e, y, np.sqrt(y)), "gaussian")
    assert fit.fwhm_raw == pytest.approx(FWHM_PER_SIGMA * fit.sigma_width, rel=1e-10)
    assert fit.sigma_width == pytest.approx(0.004, rel=1e-6)


def test_two_overlapping_peaks_never_silent():
    def second(e):
        hw = 74 * UEV
        return 8e3 * hw * hw / ((e - 1.567 - 250 * UEV) ** 2 + hw * hw)

    spec = lorentz_spectrum(noise=NoiseModel("poisson", 1e4, seed=4), extra=second)
    try:
        fit = fit_peak(spec, "lorentzian")
    except NoPeakFound:
        return
    assert fit.suspect and fit.chi2_reduced > 10


def test_no_peak_found():
    e = np.linspace(1.5, 1.6, 200)
    y = np.full(200, 100.0)
    with pytest.raises(NoPeakFound):
        fit_peak(Spectrum(ENERGY, e, y, np.full(200, 10.0)), "lorentzian")


# ---------------------------------------------------------------- power broadening

POWERS = np.geomspace(0.1, 20, 15)


def test_power_model_identities():
    assert power_broadening_model(3.0, 1e-4, 1.0) == pytest.approx(2e-4, rel=1e-15)
    assert power_broadening_model(0.0, 1e-4, 1.0) == 1e-4


@pytest.mark.parametrize("gamma0_uev", [103.8, 122.6, 124.5, 244.8])
def test_power_round_trip(gamma0_uev):
    data, _ = rows("power_broadening", {"gamma0_ev": gamma0_uev * UEV, "p0": 2.0}, POWERS)
    fit = fit_power_broadening(data, irf_fwhm=44 * UEV)
    assert fit.gamma0 == pytest.approx(gamma0_uev * UEV, rel=1e-3)
    assert fit.p0 == pytest.approx(2.0, rel=1e-3)
    assert fit.gamma0_irf_corrected == pytest.approx((gamma0_uev - 44.0) * UEV, rel=1e-3)


def test_power_insufficient_span():
    data, _ = rows("power_broadening", {"gamma0_ev": 1e-4, "p0": 2.0}, [1.0, 1.5, 2.0])
    with pytest.raises(InsufficientSpan):
        fit_power_broadening(data)


# ---------------------------------------------------------------- temperature broadening

TEMPS = np.linspace(5, 60, 12)


def test_temperature_round_trip_with_irf():
    truth = {"gamma0_ev": 97.3 * UEV, "a_ev_per_k": 2e-7, "b_ev_per_k5": 3e-13}
    data, _ = rows("temperature_broadening", truth, TEMPS)
    fit = fit_temperature_broadening(data, irf_fwhm=44 * UEV)
    assert fit.gamma0 == pytest.approx(97.3 * UEV, rel=5e-3)
    assert fit.a == pytest.approx(2e-7, rel=5e-3)
    assert fit.b == pytest.approx(3e-13, rel=5e-3)
    assert round(fit.gamma0_irf_corrected / UEV, 1) == 53.3
    c = fit.component_curves
    np.testing.assert_allclose(c["gamma0"] + c["linear"] + c["quintic"], c["total"], rtol=1e-12)


def test_temperature_constant_width():
    data = np.column_stack([TEMPS, np.full(TEMPS.size, 80 * UEV), np.full(TEMPS.size, 1 * UEV)])
    fit = fit_temperature_broadening(data)
    t_max = TEMPS.max()
    # pinned at the bound up to round-off of the bounded solve
    assert 0.0 <= fit.a * t_max <= 1e-12 * fit.gamma0
    assert 0.0 <= fit.b * t_max**5 <= 1e-12 * fit.gamma0
    assert fit.gamma0 == pytest.approx(80 * UEV, rel=1e-12)


def test_temperature_quintic_dominated():
    b = 3e-13
    data, _ = rows("temperature_broadening", {"gamma0_ev": 50 * UEV, "a_ev_per_k": 0.0, "b_ev_per_k5": b}, TEMPS)
    fit = fit_temperature_broadening(data)
    t_max = TEMPS.max()
    assert fit.a <= 1e-3 * (b * t_max**5) / t_max


def test_negative_width_rejected():
    data = np.column_stack([TEMPS, np.full(TEMPS.size, -1e-5), np.ones(TEMPS.size) * 1e-6])
    with pytest.raises(NegativeWidthInput):
        fit_temperature_broadening(data)


# ---------------------------------------------------------------- saturation

SAT_P = np.geomspace(0.05, 8, 15)


def test_saturation_model_identities():
    assert saturation_model(1.1, 0.82e6, 1.1) == pytest.approx(0.41e6)
    eps = 1e-9
    assert saturation_model(eps, 0.82e6, 1.1) / eps == pytest.approx(0.82e6 / 1.1, rel=1e-6)


def test_saturation_round_trip():
    data, _ = rows("saturation", {"i_sat_cps": 0.82e6, "p_sat": 1.1}, SAT_P)
    fit = fit_saturation(data)
    assert fit.i_sat == pytest.approx(0.82e6, rel=1e-3)
    assert fit.p_sat == pytest.approx(1.1, rel=1e-3)


def test_saturation_with_background_slope():
    data, _ = rows("saturation", {"i_sat_cps": 0.82e6, "p_sat": 1.1, "slope": 2e4}, SAT_P)
    fit = fit_saturation(data, background_slope=True)
    assert fit.background_slope == pytest.approx(2e4, rel=1e-3)
    assert fit.p_sat == pytest.approx(1.1, rel=1e-3)


def test_saturation_all_zero():
    data = np.column_stack([SAT_P, np.zeros(SAT_P.size), np.ones(SAT_P.size)])
    with pytest.raises(AllZeroIntensity):
        fit_saturation(data)


# ---------------------------------------------------------------- g2

TAU = np.linspace(-30, 30, 121)


def test_g2_raw_dip():
    data, _ = rows("g2", {"alpha": 0.77, "tau0_ns": 1.74}, TAU)
    fit = fit_g2(data)
    assert fit.g2_zero_raw == pytest.approx(0.23, abs=1e-9)
    assert fit.tau0 == pytest.approx(1.74, rel=1e-3)
    assert fit.model(np.array([1e6]))[0] == pytest.approx(1.0, abs=1e-9)


def test_g2_irf_deconvolution():
    # 0.3 ns jitter lifts a true dip of 0.18 to about 0.23
    truth = {"alpha": 0.82, "tau0_ns": 1.74, "irf_fwhm_ns": 0.3}
    data, _ = rows("g2", truth, np.linspace(-20, 20, 401))
    fit = fit_g2(data, irf_fwhm_ns=0.3)
    assert fit.g2_zero_raw == pytest.approx(0.23, abs=0.01)
    assert fit.g2_zero_irf == pytest.approx(0.18, abs=0.02)
    noisy, _ = rows("g2", truth, np.linspace(-20, 20, 401), NoiseModel("gaussian", 0.02, seed=8))
    fit = fit_g2(noisy, irf_fwhm_ns=0.3)
    assert fit.g2_zero_irf == pytest.approx(0.18, abs=0.02)


def test_g2_perfect_antibunching_touches_zero():
    data, _ = rows("g2", {"alpha": 1.0, "tau0_ns": 1.74}, TAU)
    assert data[np.argmin(np.abs(TAU)), 1] == 0.0


def test_g2_unnormalized():
    data, _ = rows("g2", {"alpha": 0.77, "tau0_ns": 1.74, "norm": 1.5}, TAU)
    with pytest.raises(UnnormalizedHistogram):
        fit_g2(data)
    fit = fit_g2(data, fit_normalization=True)
    assert fit.norm == pytest.approx(1.5, rel=1e-6)
    assert fit.alpha == pytest.approx(0.77, rel=1e-6)


# ---------------------------------------------------------------- lifetime

T_NS = np.linspace(0, 15, 100)


def test_lifetime_round_trip():
    data, _ = rows("lifetime", {"tau_ns": 1.74, "amplitude": 1e4, "baseline": 5.0}, T_NS)
    fit = fit_lifetime(data)
    assert fit.tau == pytest.approx(1.74, rel=1e-3)
    assert lifetime_model(1.74, 1.74, 1e4, 5.0) == pytest.approx(1e4 / math.e + 5.0, rel=1e-15)


def test_lifetime_poisson_repetitions():
    inside = 0
    for r in range(100):
        data, truth = rows("lifetime", {"tau_ns": 1.74, "amplitude": 1.0, "baseline": 1e-3}, T_NS,
                           NoiseModel("poisson", 1e4, seed=17), replica=r)
        fit = fit_lifetime(data)
        inside += abs(fit.tau - 1.74) <= 3 * fit.uncertainties["tau"]
    assert inside >= 97


# ---------------------------------------------------------------- radiative lifetime


@pytest.mark.parametrize("e, mu, expected", [(1.62, 0.59, 75.0), (1.48, 0.51, 127.0)])
def test_radiative_lifetime(e, mu, expected):
    assert radiative_lifetime(e, mu, 2.4) == pytest.approx(expected, rel=0.05)


def test_radiative_scaling(rng):
    base = radiative_lifetime(1.62, 0.59, 2.4)
    assert radiative_lifetime(1.62, 1.18, 2.4) == pytest.approx(base / 4, rel=1e-14)
    const = base * 2.4 * 1.62**3 * 0.59**2
    for e, mu, n in rng.uniform(0.5, 3.0, (20, 3)):
        assert radiative_lifetime(e, mu, n) * n * e**3 * mu**2 == pytest.approx(const, rel=1e-12)


def test_radiative_rejects_non_positive():
    with pytest.raises(NonPositiveInput):
        radiative_lifetime(0.0, 0.59, 2.4)


def test_radiative_runtime():
    t = time.perf_counter()
    for _ in range(1000):
        radiative_lifetime(1.62, 0.59, 2.4)
    assert (time.perf_counter() - t) / 1000 < 1e-3


# ---------------------------------------------------------------- scale covariance


def test_scale_covariance():
    c = 37.0
    data, _ = rows("saturation", {"i_sat_cps": 0.82e6, "p_sat": 1.1}, SAT_P, NoiseModel("gaussian", 0.01, 2, True))
    a, b = fit_saturation(data), fit_saturation(data * [1, c, c])
    assert b.p_sat == pytest.approx(a.p_sat, rel=1e-6)
    assert b.i_sat == pytest.approx(c * a.i_sat, rel=1e-6)

    data, _ = rows("lifetime", {"tau_ns": 1.74, "amplitude": 1.0, "baseline": 1e-3}, T_NS, NoiseModel("poisson", 1e4, 2))
    a, b = fit_lifetime(data), fit_lifetime(data * [1, c, c])
    assert b.tau == pytest.approx(a.tau, rel=1e-6)
    assert b.amplitude == pytest.approx(c * a.amplitude, rel=1e-6)
    assert b.baseline == pytest.approx(c * a.baseline, rel=1e-5, abs=1e-9 * b.amplitude)

    data, _ = rows("g2", {"alpha": 0.77, "tau0_ns": 1.74}, TAU, NoiseModel("gaussian", 0.02, 2))
    a, b = fit_g2(data, fit_normalization=True), fit_g2(data * [1, c, c], fit_normalization=True)
    assert b.alpha == pytest.approx(a.alpha, rel=1e-6)
    assert b.tau0 == pytest.approx(a.tau0, rel=1e-6)
    assert b.norm == pytest.approx(c * a.norm, rel=1e-6)

    spec = lorentz_spectrum(noise=NoiseModel("poisson", 1e4, seed=2))
    a = fit_peak(spec, "lorentzian")
    b = fit_peak(Spectrum(ENERGY, spec.axis, spec.intensity * c, spec.sigma * c), "lorentzian")
    assert b.fwhm_raw == pytest.approx(a.fwhm_raw, rel=1e-6)
    assert abs(b.center - a.center) <= 1e-6 * a.fwhm_raw
    assert b.amplitude == pytest.approx(c * a.amplitude, rel=1e-6)

    data, _ = rows("power_broadening", {"gamma0_ev": 1e-4, "p0": 2.0}, POWERS, NoiseModel("gaussian", 0.01, 2, True))
    a, b = fit_power_broadening(data), fit_power_broadening(data * [1, c, c])
    assert b.p0 == pytest.approx(a.p0, rel=1e-6)
    assert b.gamma0 == pytest.approx(c * a.gamma0, rel=1e-6)


# ---------------------------------------------------------------- Monte Carlo coverage

N_REPLICAS = 500


def coverage(fit_fn, model, truth, x, noise, keys):
    """Fraction of replicas whose 1-sigma interval covers the truth, per parameter."""
    hits = dict.fromkeys(keys, 0)
    for r in range(N_REPLICAS):
        data, true_scaled = rows(model, truth, x, noise, replica=r)
        fit = fit_fn(data)
        for k, (attr, tkey) in keys.items():
            hits[k] += abs(getattr(fit, attr) - true_scaled[tkey]) <= fit.uncertainties[k]
    return {k: v / N_REPLICAS for k, v in hits.items()}


COVERAGE_CASES = {
    "power": (fit_power_broadening, "power_broadening", {"gamma0_ev": 103.8 * UEV, "p0": 2.0}, POWERS,
              NoiseModel("gaussian", 0.01, 31, True), {"gamma0": ("gamma0", "gamma0_ev"), "p0": ("p0", "p0")}),
    "temperature": (fit_temperature_broadening, "temperature_broadening",
                    {"gamma0_ev": 97.3 * UEV, "a_ev_per_k": 2e-7, "b_ev_per_k5": 3e-13}, TEMPS,
                    NoiseModel("gaussian", 1 * UEV, 32), {"gamma0": ("gamma0", "gamma0_ev"), "a": ("a", "a_ev_per_k"),
                                                          "b": ("b", "b_ev_per_k5")}),
    "saturation": (fit_saturation, "saturation", {"i_sat_cps": 0.82e6, "p_sat": 1.1}, SAT_P,
                   NoiseModel("gaussian", 0.01, 33, True), {"i_sat": ("i_sat", "i_sat_cps"), "p_sat": ("p_sat", "p_sat")}),
    "g2": (fit_g2, "g2", {"alpha": 0.77, "tau0_ns": 1.74}, TAU, NoiseModel("gaussian", 0.02, 34),
           {"alpha": ("alpha", "alpha"), "tau0": ("tau0", "tau0_ns")}),
    "lifetime": (fit_lifetime, "lifetime", {"tau_ns": 1.74, "amplitude": 1.0, "baseline": 1e-3}, T_NS,
                 NoiseModel("poisson", 1e4, 35), {"tau": ("tau", "tau_ns"), "amplitude": ("amplitude", "amplitude")}),
}


@pytest.mark.slow
@pytest.mark.parametrize("case", sorted(COVERAGE_CASES))
def test_one_sigma_coverage(case):
    cov = coverage(*COVERAGE_CASES[case])
    for k, frac in cov.items():
        assert 0.58 <= frac <= 0.78, (k, frac)


@pytest.mark.slow
def test_peak_one_sigma_coverage():
    hits = 0
    for r in range(N_REPLICAS):
        fit = fit_peak(lorentz_spectrum(noise=NoiseModel("poisson", 1e4, seed=36), replica=r), "lorentzian")
        hits += abs(fit.fwhm_raw - 148 * UEV) <= fit.uncertainties["fwhm"]
    assert 0.58 <= hits / N_REPLICAS <= 0.78


# ---------------------------------------------------------------- Latin-hypercube closure

LHS_CASES = {
    "power_broadening": (fit_power_broadening, POWERS, {"gamma0_ev": (50 * UEV, 300 * UEV), "p0": (0.5, 5.0)},
                         {"gamma0_ev": "gamma0", "p0": "p0"}),
    "temperature_broadening": (fit_temperature_broadening, TEMPS,
                               {"gamma0_ev": (50 * UEV, 300 * UEV), "a_ev_per_k": (5e-8, 5e-7),
                                "b_ev_per_k5": (5e-14, 5e-13)},
                               {"gamma0_ev": "gamma0", "a_ev_per_k": "a", "b_ev_per_k5": "b"}),
    "saturation": (fit_saturation, SAT_P, {"i_sat_cps": (1e5, 5e6), "p_sat": (0.3, 3.0)},
                   {"i_sat_cps": "i_sat", "p_sat": "p_sat"}),
    "g2": (fit_g2, TAU, {"alpha": (0.2, 0.95), "tau0_ns": (0.5, 5.0)}, {"alpha": "alpha", "tau0_ns": "tau0"}),
    "lifetime": (fit_lifetime, T_NS, {"tau_ns": (0.5, 4.0), "amplitude": (1e2, 1e5), "baseline": (1.0, 50.0)},
                 {"tau_ns": "tau", "amplitude": "amplitude", "baseline": "baseline"}),
}


@pytest.mark.parametrize("model", sorted(LHS_CASES))
def test_latin_hypercube_closure(model):
    fit_fn, x, ranges, attrs = LHS_CASES[model]
    names = list(ranges)
    lo = np.array([ranges[n][0] for n in names])
    hi = np.array([ranges[n][1] for n in names])
    points = qmc.scale(qmc.LatinHypercube(d=len(names), seed=7).random(20), lo, hi)
    for p in points:
        truth = dict(zip(names, p))
        data, _ = rows(model, truth, x)
        fit = fit_fn(data)
        for n in names:
            assert getattr(fit, attrs[n]) == pytest.approx(truth[n], rel=5e-3), (model, n, truth)
