"""Forward generators for every fitter, with ground truth attached.

Model formulas here are written out independently of the analysis modules so
that a round trip through generator and fitter can catch errors in either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..constants import HC_EV_NM
from ..errors import InputError, UnknownModel
from ..spectra import WAVELENGTH, Spectrum
from .reference import reference_lineshape
from .rng import NONE, POISSON, NoiseModel, generator

DEFAULT_PEAK_COUNTS = 1.0e4


def _fmt(v) -> str:
    return repr(float(v))


def gen_vibronic_spectrum(params, grid_nm, noise: NoiseModel = NoiseModel(), peak_counts: float | None = None,
                          replica: int = 0, oversample: int = 8) -> Spectrum:
    """Wavelength-domain PL spectrum for vibronic parameters.

    The lineshape is multiplied by ``E^3``, carried to the wavelength domain
    with the ``hc / lambda^2`` Jacobian and scaled so that its maximum equals
    the Poisson scale (or ``peak_counts``, default 1e4, for other noise kinds).
    True parameters are stored in the metadata as ``true_*`` entries.
    """
    lam = np.asarray(grid_nm, dtype=float)
    if lam.ndim != 1 or np.any(lam <= 0) or not np.all(np.diff(lam) > 0):
        raise InputError("grid_nm must be strictly increasing positive wavelengths")
    energy = HC_EV_NM / lam
    psf = params.psf
    n_max = None if params.n_max in (None, "auto") else int(params.n_max)
    dens = reference_lineshape(
        params.e_zpl - energy, params.gamma_zpl, params.s_hr, psf.values, psf.delta_e, psf.e_max,
        params.temperature, params.zpl_shape, oversample, n_max=n_max,
    )
    per_nm = dens * energy**3 * HC_EV_NM / lam**2
    peak = noise.scale if noise.kind == POISSON else (peak_counts or DEFAULT_PEAK_COUNTS)
    expected = per_nm * (peak / per_nm.max())
    counts, sigma = noise.apply(expected, replica)
    if noise.kind == NONE:
        sigma = np.sqrt(np.maximum(expected, 1.0))
    md = {
        "true_e_zpl_ev": _fmt(params.e_zpl),
        "true_gamma_zpl_ev": _fmt(params.gamma_zpl),
        "true_s_hr": _fmt(params.s_hr),
        "true_psf_delta_e_ev": _fmt(psf.delta_e),
        "true_psf_e_max_ev": _fmt(psf.e_max),
        "true_psf": ",".join(_fmt(v) for v in psf.values),
        "temperature_K": _fmt(params.temperature),
        "zpl_shape": params.zpl_shape,
        "noise": noise.kind,
        "noise_scale": _fmt(noise.scale),
        "seed": str(noise.seed),
        "replica": str(replica),
    }
    return Spectrum(WAVELENGTH, lam, counts, sigma, md)


def default_vibronic_grid(e_zpl: float, below_ev: float = 0.45, above_ev: float = 0.01, n: int = 2000) -> np.ndarray:
    """Uniform wavelength grid from ``e_zpl + above_ev`` down to ``e_zpl - below_ev``."""
    return np.linspace(HC_EV_NM / (e_zpl + above_ev), HC_EV_NM / (e_zpl - below_ev), n)


# ---------------------------------------------------------------- scalar models


def _g2_dip_with_irf(tau, tau0, fwhm, samples=4001):
    """``exp(-|tau|/tau0)`` smeared by a Gaussian, by direct numerical quadrature."""
    sig = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    s = np.linspace(-10 * sig, 10 * sig, samples)
    kern = np.exp(-0.5 * (s / sig) ** 2)
    kern /= np.trapezoid(kern, s)
    tau = np.asarray(tau, dtype=float)
    vals = np.exp(-np.abs(tau[:, None] - s[None, :]) / tau0)
    return np.trapezoid(vals * kern[None, :], s, axis=1)


def _power(x, p):
    return p["gamma0_ev"] * np.sqrt(1.0 + x / p["p0"])


def _temperature(x, p):
    return p["gamma0_ev"] + p["a_ev_per_k"] * x + p["b_ev_per_k5"] * x**5


def _saturation(x, p):
    return p["i_sat_cps"] * x / (x + p["p_sat"]) + p.get("slope", 0.0) * x


def _g2(x, p):
    alpha, tau0 = p["alpha"], p["tau0_ns"]
    irf = p.get("irf_fwhm_ns", 0.0)
    dip = _g2_dip_with_irf(x, tau0, irf) if irf else np.exp(-np.abs(x) / tau0)
    return p.get("norm", 1.0) * (1.0 - alpha * dip)


def _lifetime(x, p):
    return p.get("baseline", 0.0) + p["amplitude"] * np.exp(-x / p["tau_ns"])


SCALAR_MODELS = {
    "power_broadening": (("power", "fwhm_ev", "sigma"), _power, ("gamma0_ev", "p0")),
    "temperature_broadening": (("temperature_k", "fwhm_ev", "sigma"), _temperature,
                               ("gamma0_ev", "a_ev_per_k", "b_ev_per_k5")),
    "saturation": (("power", "intensity_cps", "sigma"), _saturation, ("i_sat_cps", "p_sat")),
    "g2": (("tau_ns", "g2", "sigma"), _g2, ("alpha", "tau0_ns")),
    "lifetime": (("t_ns", "counts", "sigma"), _lifetime, ("tau_ns", "amplitude")),
}


@dataclass
class ScalarDataset:
    model: str
    columns: tuple
    rows: np.ndarray  # (n, 3): x, value, sigma
    truth: dict
    metadata: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [f"# model={self.model}"]
        lines += [f"# true_{k}={_fmt(v)}" for k, v in sorted(self.truth.items())]
        lines += [f"# {k}={v}" for k, v in sorted(self.metadata.items())]
        lines.append(",".join(self.columns))
        lines += [",".join(repr(float(v)) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"


def gen_scalar_dataset(model: str, true_params: dict, sample_points, noise: NoiseModel = NoiseModel(),
                       replica: int = 0) -> ScalarDataset:
    """Exact model values at ``sample_points`` plus noise.

    For ``poisson`` noise the curve is first scaled so its maximum equals the
    noise scale and the truth for amplitude-like parameters is scaled along.
    """
    if model not in SCALAR_MODELS:
        raise UnknownModel(f"unknown model {model!r}; choose from {sorted(SCALAR_MODELS)}")
    columns, fn, required = SCALAR_MODELS[model]
    missing = [k for k in required if k not in true_params]
    if missing:
        raise InputError(f"missing true parameters for {model}: {missing}")
    truth = {k: float(v) for k, v in true_params.items()}
    x = np.asarray(sample_points, dtype=float)
    y = fn(x, truth)
    if noise.kind == POISSON:
        factor = noise.scale / float(np.max(np.abs(y)))
        y = y * factor
        for k in ("amplitude", "baseline", "i_sat_cps", "slope"):
            if k in truth:
                truth[k] *= factor
    noisy, sigma = noise.apply(y, replica)
    md = {"noise": noise.kind, "noise_scale": _fmt(noise.scale), "seed": str(noise.seed), "replica": str(replica)}
    return ScalarDataset(model, columns, np.column_stack([x, noisy, sigma]), truth, md)


# ---------------------------------------------------------------- hyperspectral cubes


@dataclass
class SyntheticCube:
    wavelengths: np.ndarray
    data: np.ndarray
    positions: list  # (y, x) per emitter
    zpl_nm: list


def gen_hyperspectral_cube(n_emitters: int = 25, shape=(64, 64), wavelengths=None, seed: int = 0,
                           min_distance_px: float = 6.0, blob_sigma_px: float = 1.5,
                           peak_counts: float = 400.0, background: float = 20.0,
                           zpl_mean_nm: float = 770.0, zpl_sigma_nm: float = 33.0,
                           line_fwhm_nm: float = 1.0) -> SyntheticCube:
    """Cube of Gaussian-blob emitters with Lorentzian lines over a Poisson background.

    Positions are integer pixels drawn uniformly with rejection so that every
    pair is at least ``min_distance_px`` apart (distances wrap around the map).
    """
    rng = generator(seed, 0)
    ny, nx = shape
    wl = np.arange(650.0, 900.0, 0.5) if wavelengths is None else np.asarray(wavelengths, dtype=float)
    pos = []
    tries = 0
    while len(pos) < n_emitters:
        tries += 1
        if tries > 100000:
            raise InputError("could not place emitters with the requested separation")
        p = (int(rng.integers(ny)), int(rng.integers(nx)))
        ok = True
        for q in pos:
            dy = min(abs(p[0] - q[0]), ny - abs(p[0] - q[0]))
            dx = min(abs(p[1] - q[1]), nx - abs(p[1] - q[1]))
            if math.hypot(dy, dx) < min_distance_px:
                ok = False
                break
        if ok:
            pos.append(p)
    zpl = np.clip(rng.normal(zpl_mean_nm, zpl_sigma_nm, n_emitters), wl[0] + 5, wl[-1] - 5)
    yy, xx = np.mgrid[0:ny, 0:nx]
    expected = np.full((ny, nx, wl.size), float(background))
    hw = 0.5 * line_fwhm_nm
    for (py, px), z in zip(pos, zpl):
        dy = (yy - py + ny // 2) % ny - ny // 2
        dx = (xx - px + nx // 2) % nx - nx // 2
        blob = np.exp(-0.5 * (dy * dy + dx * dx) / blob_sigma_px**2)
        line = hw * hw / ((wl - z) ** 2 + hw * hw)
        expected += peak_counts * blob[:, :, None] * line[None, None, :]
    data = rng.poisson(expected).astype(float)
    return SyntheticCube(wl, data, pos, zpl.tolist())
