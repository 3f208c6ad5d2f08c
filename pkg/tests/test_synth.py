import numpy as np
import pytest
from conftest import E_ZPL, GAMMA_ZPL, gaussian_psf, vibronic_params

from qekit.errors import InputError, UnknownModel
from qekit.photophysics import fit_lifetime, fit_power_broadening
from qekit.spectra import to_energy, to_lineshape
from qekit.synth import NoiseModel, default_vibronic_grid, gen_scalar_dataset, gen_vibronic_spectrum, generator
from qekit.vibronic import zpl_profile

MASK = (1 << 64) - 1


def philox4x64_10(counter, key):
    """Reference Philox-4x64-10 block function (Salmon et al. 2011)."""
    x = list(counter)
    k0, k1 = key
    for _ in range(10):
        p0 = 0xD2E7470EE14C6C93 * x[0]
        p1 = 0xCA5A826395121157 * x[2]
        x = [((p1 >> 64) ^ x[1] ^ k0) & MASK, p1 & MASK, ((p0 >> 64) ^ x[3] ^ k1) & MASK, p0 & MASK]
        k0 = (k0 + 0x9E3779B97F4A7C15) & MASK
        k1 = (k1 + 0xBB67AE8584CAA73B) & MASK
    return x


def test_philox_known_answer():
    assert philox4x64_10([0, 0, 0, 0], [0, 0]) == [0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B,
                                                   0x7E68B68AEC7BA23B]


@pytest.mark.parametrize("seed, replica", [(0, 0), (5, 3), (2**64 - 1, 12345), (20261018, 2**40)])
def test_stream_is_documented_philox(seed, replica):
    raw = generator(seed, replica).bit_generator.random_raw(8).tolist()
    assert raw[:4] == philox4x64_10([1, 0, 0, replica], [seed, 0])
    assert raw[4:] == philox4x64_10([2, 0, 0, replica], [seed, 0])


def test_seed_range():
    with pytest.raises(InputError):
        generator(-1)
    with pytest.raises(InputError):
        NoiseModel("poisson", 0.0)


def test_zero_s_recovers_bare_profile():
    spec = gen_vibronic_spectrum(vibronic_params(0.0), default_vibronic_grid(E_ZPL))
    ls = to_lineshape(to_energy(spec), E_ZPL)
    ratio = ls.density / zpl_profile(ls.delta_e, GAMMA_ZPL)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)


def test_same_seed_bit_identical():
    p = vibronic_params(1.04)
    grid = default_vibronic_grid(E_ZPL)
    a = gen_vibronic_spectrum(p, grid, NoiseModel("poisson", 1e4, seed=99), replica=4)
    b = gen_vibronic_spectrum(p, grid, NoiseModel("poisson", 1e4, seed=99), replica=4)
    c = gen_vibronic_spectrum(p, grid, NoiseModel("poisson", 1e4, seed=99), replica=5)
    assert a.intensity.tobytes() == b.intensity.tobytes()
    assert a.sigma.tobytes() == b.sigma.tobytes()
    assert a.metadata == b.metadata
    assert not np.array_equal(a.intensity, c.intensity)


def test_truth_in_metadata():
    spec = gen_vibronic_spectrum(vibronic_params(1.7), default_vibronic_grid(E_ZPL), NoiseModel("poisson", 1e4, 1))
    md = spec.metadata
    assert float(md["true_s_hr"]) == 1.7
    assert float(md["true_e_zpl_ev"]) == E_ZPL
    assert float(md["temperature_K"]) == 4.0
    np.testing.assert_array_equal(np.array(md["true_psf"].split(","), float), gaussian_psf().values)


@pytest.mark.slow
def test_poisson_law_of_large_numbers():
    p = vibronic_params(1.04)
    grid = default_vibronic_grid(E_ZPL)
    clean = gen_vibronic_spectrum(p, grid, NoiseModel(), peak_counts=1e4).intensity
    total = np.zeros_like(clean)
    for r in range(200):
        total += gen_vibronic_spectrum(p, grid, NoiseModel("poisson", 1e4, seed=7), replica=r).intensity
    mean = total / 200
    m = clean > 100
    assert m.any()
    assert np.max(np.abs(mean[m] - clean[m]) / clean[m]) <= 0.02


def test_scalar_dataset_truth_comments():
    ds = gen_scalar_dataset("power_broadening", {"gamma0_ev": 244.8e-6, "p0": 2.0}, np.geomspace(0.1, 20, 12))
    text = ds.to_csv()
    assert "# model=power_broadening" in text
    assert "# true_gamma0_ev=0.0002448" in text
    assert "power,fwhm_ev,sigma" in text
    fit = fit_power_broadening(ds.rows)
    assert fit.gamma0 == pytest.approx(244.8e-6, rel=1e-3)


def test_unknown_model():
    with pytest.raises(UnknownModel):
        gen_scalar_dataset("voigt", {}, [1.0, 2.0])


@pytest.mark.slow
def test_lifetime_gaussian_replicas_centered():
    taus = []
    for r in range(500):
        ds = gen_scalar_dataset("lifetime", {"tau_ns": 1.74, "amplitude": 1.0}, np.linspace(0, 15, 100),
                                NoiseModel("gaussian", 0.01, seed=44, relative=True), replica=r)
        taus.append(fit_lifetime(ds.rows).tau)
    taus = np.array(taus)
    assert abs(taus.mean() - 1.74) <= 3 * taus.std(ddof=1) / np.sqrt(taus.size)
