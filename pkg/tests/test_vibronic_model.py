import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qekit.constants import K_B_EV
from qekit.errors import EmptySpectralFunction, NegativeHuangRhys, NonPositiveEnergy, NonPositiveTemperature
from qekit.synth.reference import reference_lineshape
from qekit.vibronic import (
    GridDistribution,
    PhononSpectralFunction,
    VibronicParams,
    auto_n_max,
    bose_einstein,
    forward_lineshape,
    n_phonon,
    one_phonon,
    poisson_weights,
    psb,
    zpl_profile,
)

psf_values = st.lists(st.floats(0.0, 1.0), min_size=100, max_size=100).filter(lambda v: sum(v) > 1e-3)


def random_psf(values):
    return PhononSpectralFunction(np.asarray(values, float), 0.002, 0.2)


def knot_nodes(psf, dist, oversample=8):
    """Node indices of +E_i and -E_i for every grid energy E_i."""
    k = (np.arange(psf.n_cells) + 0.5) * oversample
    k = k.astype(int)
    return dist.center + k, dist.center - k


# ---------------------------------------------------------------- Bose-Einstein


def test_bose_einstein_unit_occupation():
    t = 10.0
    assert bose_einstein(K_B_EV * t * math.log(2.0), t) == pytest.approx(1.0, rel=1e-12)


def test_bose_einstein_deep_suppression():
    assert bose_einstein(0.160, 4.0) < 1e-200


def test_bose_einstein_low_energy():
    # direct evaluation with k_B = 8.617333e-5 eV/K gives 0.058158
    oracle = 1.0 / math.expm1(0.001 / (8.617333e-5 * 4.0))
    assert bose_einstein(0.001, 4.0) == pytest.approx(oracle, abs=1e-5)
    assert bose_einstein(0.001, 4.0) == pytest.approx(0.058158, abs=1e-6)


def test_bose_einstein_errors():
    with pytest.raises(NonPositiveEnergy):
        bose_einstein(0.0, 4.0)
    with pytest.raises(NonPositiveTemperature):
        bose_einstein(0.01, 0.0)


# ---------------------------------------------------------------- one-phonon band


def test_single_cell_at_160_mev():
    values = np.zeros(100)
    values[80] = 1.0  # E_80 = 0.161 eV
    d = one_phonon(random_psf(values), 4.0)
    ax = d.axis
    emission = np.trapezoid(np.where(ax > 0, d.values, 0), dx=d.step)
    absorption = np.trapezoid(np.where(ax < 0, d.values, 0), dx=d.step)
    assert emission == pytest.approx(1.0, abs=1e-9)
    assert absorption < 1e-60


def test_empty_psf_rejected():
    with pytest.raises(EmptySpectralFunction):
        one_phonon(random_psf(np.zeros(100)), 4.0)


@settings(max_examples=50, deadline=None)
@given(psf_values, st.floats(4.0, 400.0))
def test_one_phonon_normalized(values, t):
    assert one_phonon(random_psf(values), t).integral() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(psf_values, st.floats(20.0, 400.0))
def test_detailed_balance_at_grid_points(values, t):
    psf = random_psf(values)
    d = one_phonon(psf, t)
    plus, minus = knot_nodes(psf, d)
    boltzmann = np.exp(-psf.energies / (K_B_EV * t))
    # both branches must be normal floats; below ~1e-308 the absorption node underflows
    ok = (psf.values > 0) & (d.values[plus] * boltzmann > 1e-290)
    ratio = d.values[minus[ok]] / d.values[plus[ok]]
    np.testing.assert_allclose(ratio, boltzmann[ok], rtol=1e-12)


def test_absorption_mass_monotone_in_temperature():
    psf = random_psf(np.where(np.arange(100) >= 5, 1.0, 0.0))  # modes >= 10 meV
    masses = []
    for t in (4.0, 10.0, 30.0, 100.0, 300.0):
        d = one_phonon(psf, t)
        masses.append(np.trapezoid(np.where(d.axis < 0, d.values, 0), dx=d.step))
    assert masses[0] < 1e-12
    assert all(a <= b for a, b in zip(masses, masses[1:]))


# ---------------------------------------------------------------- n-phonon terms


def test_delta_convolves_to_delta():
    h = 0.001
    v = np.zeros(21)
    v[10 + 4] = 1.0 / h
    i2 = n_phonon(GridDistribution(h, v, 10), 2)
    peak = int(np.argmax(i2.values))
    assert i2.axis[peak] == pytest.approx(2 * 4 * h)
    assert i2.values[peak] * h == pytest.approx(1.0)


def test_boxcar_convolves_to_triangle():
    h = 0.001
    ax = np.arange(-200, 201) * h
    a, b = 0.05, 0.10
    v = np.where((ax >= a - 1e-12) & (ax <= b + 1e-12), 1.0, 0.0)
    v /= v.sum() * h
    i2 = n_phonon(GridDistribution(h, v, 200), 2)
    x = i2.axis
    support = x[i2.values > 1e-9]
    assert support.min() == pytest.approx(2 * a, abs=1.5 * h)
    assert support.max() == pytest.approx(2 * b, abs=1.5 * h)
    assert x[np.argmax(i2.values)] == pytest.approx(a + b, abs=h)
    # exact triangle with the same discrete support
    width = b - a
    tri = np.clip(1.0 - np.abs(x - (a + b)) / width, 0, None) / width
    assert np.max(np.abs(i2.values - tri)) < 0.05 * tri.max()


@settings(max_examples=50, deadline=None)
@given(psf_values, st.floats(4.0, 300.0))
def test_n_phonon_normalized(values, t):
    i1 = one_phonon(random_psf(values), t, oversample=2)
    cur = i1
    for n in range(1, 11):
        if n > 1:
            cur = n_phonon(i1, 2) if n == 2 else GridDistribution(i1.step, np.convolve(i1.values, cur.values) * i1.step,
                                                                  i1.center + cur.center)
        assert cur.integral() == pytest.approx(1.0, abs=1e-8 * n)


# ---------------------------------------------------------------- sideband


def single_mode_band(t=4.0):
    return one_phonon(PhononSpectralFunction.single_mode(0.16), t)


def test_zero_s_has_no_sideband():
    sb = psb(single_mode_band(), 0.0)
    assert np.all(sb.psb.values == 0)
    assert sb.zpl_weight == 1.0


def test_zpl_weight_at_s_214():
    # e^-2.14 = 0.117655
    assert psb(single_mode_band(), 2.14).zpl_weight == pytest.approx(math.exp(-2.14), abs=1e-12)
    assert psb(single_mode_band(), 2.14).zpl_weight == pytest.approx(0.117655, abs=1e-6)


@pytest.mark.parametrize("s", [0.5, 1.0, 3.0])
def test_poisson_mass_closure(s):
    sb = psb(single_mode_band(), s)
    assert sb.zpl_weight + sb.psb.integral() == pytest.approx(1.0, abs=1e-6)


def test_negative_s_rejected():
    with pytest.raises(NegativeHuangRhys):
        psb(single_mode_band(), -0.1)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 25.0))
def test_auto_truncation_rule(s):
    n = auto_n_max(s)
    w = poisson_weights(s, n)
    if n < 20:
        assert w.sum() >= 1 - 1e-6
    if n > 0:
        assert math.fsum(poisson_weights(s, n - 1)) < 1 - 1e-6


# ---------------------------------------------------------------- forward lineshape


def test_zero_s_is_bare_zpl():
    p = VibronicParams(1.567, 150e-6, 0.0, PhononSpectralFunction.single_mode(0.16), 4.0)
    ls = forward_lineshape(p)
    np.testing.assert_allclose(ls.density, zpl_profile(ls.delta_e, 150e-6), rtol=0, atol=1e-12 * ls.density.max())


@settings(max_examples=10, deadline=None)
@given(psf_values, st.floats(0.0, 3.0), st.floats(4.0, 60.0), st.sampled_from(["lorentzian", "gaussian"]))
def test_forward_lineshape_normalized(values, s, t, shape):
    p = VibronicParams(1.567, 150e-6, s, random_psf(values), t, shape)
    ls = forward_lineshape(p, oversample=2)
    # Lorentzian wings beyond the returned window are accounted for explicitly
    assert ls.integral() + float(ls.metadata["tail_mass"]) == pytest.approx(1.0, abs=1e-6)


def test_forward_matches_reference_evaluation():
    psf = PhononSpectralFunction.single_mode(0.16)
    p = VibronicParams(1.567, 150e-6, 2.14, psf, 4.0)
    ls = forward_lineshape(p)
    ref = reference_lineshape(ls.delta_e, 150e-6, 2.14, psf.values, 0.002, 0.2, 4.0, oversample=8)
    assert np.max(np.abs(ls.density - ref)) <= 1e-4 * ref.max()
