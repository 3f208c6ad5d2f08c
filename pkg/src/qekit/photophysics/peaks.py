"""Single-peak linewidth fits and instrument-response correction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, IrfExceedsRaw, NoPeakFound
from ..spectra import ENERGY, Spectrum
from ._lsq import Param, weighted_least_squares

LORENTZIAN = "lorentzian"
GAUSSIAN = "gaussian"
LINEAR = "linear"
QUADRATURE = "quadrature"

DEFAULT_IRF_FWHM_EV = 44.0e-6
DEFAULT_IRF_METHOD = LINEAR
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
SUSPECT_CHI2 = 10.0


def correct_irf(fwhm_raw: float, irf_fwhm: float = DEFAULT_IRF_FWHM_EV, method: str = DEFAULT_IRF_METHOD) -> float:
    """Remove the instrument response from a measured FWHM.

    ``linear`` suits Lorentzian-on-Lorentzian broadening (widths add),
    ``quadrature`` Gaussian-on-Gaussian (widths add in quadrature).
    """
    if not irf_fwhm > 0:
        raise InputError("irf_fwhm must be > 0")
    if not fwhm_raw > irf_fwhm:
        raise IrfExceedsRaw(f"raw width {fwhm_raw!r} does not exceed the IRF width {irf_fwhm!r}")
    if method == LINEAR:
        return fwhm_raw - irf_fwhm
    if method == QUADRATURE:
        return math.sqrt((fwhm_raw - irf_fwhm) * (fwhm_raw + irf_fwhm))
    raise InputError(f"unknown IRF method {method!r}")


def add_irf(fwhm: float, irf_fwhm: float, method: str = DEFAULT_IRF_METHOD) -> float:
    """Inverse of :func:`correct_irf`."""
    if method == LINEAR:
        return fwhm + irf_fwhm
    if method == QUADRATURE:
        return math.hypot(fwhm, irf_fwhm)
    raise InputError(f"unknown IRF method {method!r}")


def peak_profile(e, center, fwhm, shape=LORENTZIAN):
    """Unit-height profile."""
    u = (np.asarray(e, dtype=float) - center) / fwhm
    if shape == LORENTZIAN:
        return 1.0 / (1.0 + 4.0 * u * u)
    if shape == GAUSSIAN:
        return np.exp(-4.0 * math.log(2.0) * u * u)
    raise InputError(f"unknown peak shape {shape!r}")


@dataclass
class PeakFit:
    center: float
    fwhm_raw: float
    amplitude: float
    baseline: float
    shape: str
    uncertainties: dict
    chi2_reduced: float
    converged: bool
    nfev: int
    fwhm_irf_corrected: float | None = None
    irf_fwhm: float | None = None
    irf_method: str | None = None
    curve: tuple = field(default=(), repr=False)

    @property
    def sigma_width(self) -> float:
        """Gaussian standard deviation equivalent of the FWHM."""
        return self.fwhm_raw / FWHM_PER_SIGMA

    @property
    def suspect(self) -> bool:
        """True when the single-peak model is a poor description of the data."""
        return not self.chi2_reduced <= SUSPECT_CHI2

    def model(self, e):
        return self.baseline + self.amplitude * peak_profile(e, self.center, self.fwhm_raw, self.shape)

    def to_report(self) -> dict:
        u = self.uncertainties
        out = {
            "model": f"peak_{self.shape}",
            "center_ev": self.center,
            "center_ev_sigma": u["center"],
            "fwhm_raw_ev": self.fwhm_raw,
            "fwhm_raw_ev_sigma": u["fwhm"],
            "amplitude": self.amplitude,
            "amplitude_sigma": u["amplitude"],
            "baseline": self.baseline,
            "baseline_sigma": u["baseline"],
            "shape": self.shape,
            "chi2_reduced": self.chi2_reduced,
            "suspect": self.suspect,
            "converged": self.converged,
            "iterations": self.nfev,
            "fwhm_irf_corrected_ev": self.fwhm_irf_corrected,
            "irf_fwhm_ev": self.irf_fwhm,
            "irf_method": self.irf_method,
        }
        if self.curve:
            out["curve"] = {"e_ev": list(self.curve[0]), "value": list(self.curve[1])}
        return out


def _half_width(x, y, i, level):
    def walk(step):
        j = i
        while 0 <= j + step < x.size and y[j + step] > level:
            j += step
        return x[min(max(j + step, 0), x.size - 1)]

    return abs(walk(1) - walk(-1))


def fit_peak(spectrum: Spectrum, shape: str = LORENTZIAN, window=None, irf_fwhm=None,
             irf_method: str = DEFAULT_IRF_METHOD, min_snr: float = 3.0, strict: bool = True) -> PeakFit:
    """Fit ``baseline + amplitude * profile(E; center, fwhm)`` in the energy domain.

    Raises
    ------
    NoPeakFound
        Peak height above the median is below ``min_snr`` times its sigma.
    """
    if spectrum.axis_kind != ENERGY:
        raise InputError("fit_peak needs an energy-domain spectrum")
    if shape not in (LORENTZIAN, GAUSSIAN):
        raise InputError(f"unknown peak shape {shape!r}")
    e, y, s = spectrum.axis, spectrum.intensity, spectrum.sigma
    if window is not None:
        lo, hi = sorted(window)
        m = (e >= lo) & (e <= hi)
        e, y, s = e[m], y[m], s[m]
    if e.size < 5:
        raise NoPeakFound("fewer than 5 bins in the fit window")
    s = np.where(s > 0, s, np.min(s[s > 0]) if np.any(s > 0) else 1.0)
    i = int(np.argmax(y))
    base0 = float(np.median(y))
    height = float(y[i] - base0)
    if not height >= min_snr * s[i]:
        raise NoPeakFound(f"peak SNR {height / s[i]:.3g} below {min_snr}")
    spacing = float(np.median(np.abs(np.diff(e))))
    fwhm0 = max(_half_width(e, y, i, base0 + 0.5 * height), spacing)
    params = [
        Param("none", fwhm0, float(e[i])),
        Param("log", fwhm0),
        Param("log", height),
        Param("none", height, base0),
    ]

    def model(x, p):
        return p[3] + p[2] * peak_profile(x, p[0], p[1], shape)

    r = weighted_least_squares(model, e, y, s, params, [e[i], fwhm0, height, base0],
                               strict=strict, what="peak fit")
    c, w, a, b = (float(v) for v in r.params)
    unc = dict(zip(("center", "fwhm", "amplitude", "baseline"), (float(v) for v in r.sigmas)))
    corrected = correct_irf(w, irf_fwhm, irf_method) if irf_fwhm else None
    return PeakFit(c, w, a, b, shape, unc, r.chi2_reduced, r.converged, r.nfev, corrected,
                   irf_fwhm, irf_method if irf_fwhm else None, (e, model(e, r.params)))
