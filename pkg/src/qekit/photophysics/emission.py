"""Saturation, antibunching and lifetime fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import AllZeroIntensity, DegenerateData, InputError, UnnormalizedHistogram
from ._lsq import Param, weighted_least_squares
from .peaks import FWHM_PER_SIGMA


def _columns(points):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError("expected rows of (x, value, sigma)")
    return arr[:, 0], arr[:, 1], arr[:, 2]


# ---------------------------------------------------------------- saturation


def saturation_model(p, i_sat, p_sat, slope=0.0):
    """``I_sat P / (P + P_sat) + slope * P``."""
    p = np.asarray(p, dtype=float)
    return i_sat * p / (p + p_sat) + slope * p


@dataclass
class SaturationFit:
    i_sat: float
    p_sat: float
    background_slope: float | None
    uncertainties: dict
    chi2_reduced: float
    converged: bool
    nfev: int

    def model(self, p):
        return saturation_model(p, self.i_sat, self.p_sat, self.background_slope or 0.0)

    def to_report(self) -> dict:
        return {
            "model": "saturation",
            "i_sat_cps": self.i_sat,
            "i_sat_cps_sigma": self.uncertainties["i_sat"],
            "p_sat_power_units": self.p_sat,
            "p_sat_power_units_sigma": self.uncertainties["p_sat"],
            "background_slope_cps_per_power_unit": self.background_slope,
            "background_slope_sigma": self.uncertainties.get("slope"),
            "chi2_reduced": self.chi2_reduced,
            "converged": self.converged,
            "iterations": self.nfev,
        }


def fit_saturation(points, background_slope: bool = False, strict: bool = True) -> SaturationFit:
    """Weighted fit of ``I = I_sat P / (P + P_sat)`` (plus ``c P`` if enabled)."""
    p, y, s = _columns(points)
    if p.size < 3 + background_slope:
        raise DegenerateData("need at least 3 saturation points")
    if not np.any(y != 0):
        raise AllZeroIntensity("all intensities are zero")
    if np.any(p <= 0):
        raise InputError("powers must be > 0")
    # 1/I = 1/I_sat + (P_sat/I_sat) / P for the initial guess
    good = y > 0
    if good.sum() >= 2:
        k, c = np.polyfit(1.0 / p[good], 1.0 / y[good], 1)
        i0 = 1.0 / c if c > 0 else 2.0 * y.max()
        ps0 = k * i0 if k > 0 else float(np.median(p))
    else:
        i0, ps0 = 2.0 * abs(y).max(), float(np.median(p))
    params = [Param("log", i0), Param("log", ps0)]
    p0 = [i0, ps0]
    if background_slope:
        params.append(Param("none", i0 / p.max()))
        p0.append(0.0)

    def model(x, q):
        return saturation_model(x, q[0], q[1], q[2] if background_slope else 0.0)

    r = weighted_least_squares(model, p, y, s, params, p0, strict=strict, what="saturation fit")
    unc = {"i_sat": float(r.sigmas[0]), "p_sat": float(r.sigmas[1])}
    slope = None
    if background_slope:
        slope = float(r.params[2])
        unc["slope"] = float(r.sigmas[2])
    return SaturationFit(float(r.params[0]), float(r.params[1]), slope, unc, r.chi2_reduced, r.converged, r.nfev)


# ---------------------------------------------------------------- g2


def exp_gauss_conv(tau, tau0, sigma):
    """``exp(-|tau|/tau0)`` convolved with a unit-area Gaussian of standard deviation ``sigma``.

    Written with ``erfcx`` where the plain form would overflow.
    """
    tau = np.asarray(tau, dtype=float)

    def half(t):
        z = (sigma / tau0 - t / sigma) / math.sqrt(2.0)
        with np.errstate(over="ignore", under="ignore"):
            small = special.erfcx(np.maximum(z, 0.0)) * np.exp(-0.5 * (t / sigma) ** 2)
            large = np.exp(0.5 * (sigma / tau0) ** 2 - t / tau0) * special.erfc(np.minimum(z, 0.0))
        return np.where(z >= 0, small, large)

    return 0.5 * (half(tau) + half(-tau))


def g2_model(tau, alpha, tau0, norm=1.0, irf_fwhm=None):
    """``norm * (1 - alpha exp(-|tau|/tau0))``, optionally seen through a Gaussian IRF."""
    tau = np.asarray(tau, dtype=float)
    if irf_fwhm:
        dip = exp_gauss_conv(tau, tau0, irf_fwhm / FWHM_PER_SIGMA)
    else:
        dip = np.exp(-np.abs(tau) / tau0)
    return norm * (1.0 - alpha * dip)


@dataclass
class G2Fit:
    alpha: float
    tau0: float
    norm: float
    g2_zero_raw: float
    g2_zero_irf: float | None
    irf_fwhm: float | None
    uncertainties: dict
    chi2_reduced: float
    converged: bool
    nfev: int

    def model(self, tau):
        return g2_model(tau, self.alpha, self.tau0, self.norm, self.irf_fwhm)

    def asymptote(self) -> float:
        return self.norm

    def to_report(self) -> dict:
        u = self.uncertainties
        return {
            "model": "g2_single_exponential",
            "alpha": self.alpha,
            "alpha_sigma": u["alpha"],
            "tau0_ns": self.tau0,
            "tau0_ns_sigma": u["tau0"],
            "normalization": self.norm,
            "normalization_sigma": u.get("norm", 0.0),
            "g2_zero_raw": self.g2_zero_raw,
            "g2_zero_raw_sigma": u["g2_zero_raw"],
            "g2_zero_irf": self.g2_zero_irf,
            "g2_zero_irf_sigma": u["alpha"] if self.g2_zero_irf is not None else None,
            "irf_fwhm_ns": self.irf_fwhm,
            "chi2_reduced": self.chi2_reduced,
            "converged": self.converged,
            "iterations": self.nfev,
        }


def fit_g2(histogram, irf_fwhm_ns=None, fit_normalization: bool = False, exclude_center=None,
           strict: bool = True) -> G2Fit:
    """Fit ``g2(tau) = 1 - alpha exp(-|tau|/tau0)`` to (tau_ns, g2, sigma) rows.

    With ``irf_fwhm_ns`` the model is convolved with a Gaussian of that FWHM;
    ``g2_zero_raw`` is then the convolved value at zero delay and
    ``g2_zero_irf`` the unconvolved ``1 - alpha``.  ``exclude_center``
    (default: on exactly when no IRF is given) drops bins with ``|tau|``
    below one bin width from the fit.
    """
    tau, g, s = _columns(histogram)
    if tau.size < 7:
        raise DegenerateData("need at least 7 histogram bins")
    order = np.argsort(tau)
    tau, g, s = tau[order], g[order], s[order]
    far = np.abs(tau) >= np.quantile(np.abs(tau), 0.75)
    asym = float(np.mean(g[far]))
    if not fit_normalization and abs(asym - 1.0) > 0.2:
        raise UnnormalizedHistogram(f"large-delay level {asym:.3g} deviates from 1 by more than 20%")
    if exclude_center is None:
        exclude_center = not irf_fwhm_ns
    keep = np.ones(tau.size, dtype=bool)
    if exclude_center:
        width = float(np.median(np.diff(tau)))
        keep = np.abs(tau) >= width * (1 - 1e-9)
    norm0 = asym if fit_normalization else 1.0
    i0 = int(np.argmin(g))
    a0 = float(np.clip(1.0 - g[i0] / norm0, 0.05, 0.95))
    # delay where the dip has recovered half way
    level = norm0 * (1 - 0.5 * a0)
    above = np.abs(tau[g > level])
    t0 = float(np.min(above)) / math.log(2) if above.size else float(np.ptp(tau)) / 10
    t0 = max(t0, float(np.median(np.diff(tau))) * 0.5)
    params = [Param("logistic"), Param("log", t0)]
    p0 = [a0, t0]
    if fit_normalization:
        params.append(Param("log", norm0))
        p0.append(norm0)

    def model(x, q):
        return g2_model(x, q[0], q[1], q[2] if fit_normalization else 1.0, irf_fwhm_ns)

    r = weighted_least_squares(model, tau[keep], g[keep], s[keep], params, p0, strict=strict, what="g2 fit")
    alpha, tau0 = float(r.params[0]), float(r.params[1])
    norm = float(r.params[2]) if fit_normalization else 1.0
    unc = {"alpha": float(r.sigmas[0]), "tau0": float(r.sigmas[1])}
    if fit_normalization:
        unc["norm"] = float(r.sigmas[2])
    g0_raw = float(model(np.array([0.0]), r.params)[0])
    # delta-method sigma of the zero-delay value
    grad = np.empty(len(r.params))
    for k in range(grad.size):
        d = 1e-6 * max(abs(r.params[k]), 1e-12)
        qp, qm = r.params.copy(), r.params.copy()
        qp[k] += d
        qm[k] -= d
        grad[k] = (model(np.array([0.0]), qp)[0] - model(np.array([0.0]), qm)[0]) / (2 * d)
    unc["g2_zero_raw"] = float(math.sqrt(max(grad @ r.covariance @ grad, 0.0)))
    g0_irf = 1.0 - alpha if irf_fwhm_ns else None
    return G2Fit(alpha, tau0, norm, g0_raw, g0_irf, irf_fwhm_ns, unc, r.chi2_reduced, r.converged, r.nfev)


# ---------------------------------------------------------------- lifetime


def lifetime_model(t, tau, amplitude, baseline=0.0):
    return baseline + amplitude * np.exp(-np.asarray(t, dtype=float) / tau)


@dataclass
class LifetimeFit:
    tau: float
    amplitude: float
    baseline: float
    uncertainties: dict
    chi2_reduced: float
    converged: bool
    nfev: int

    def model(self, t):
        return lifetime_model(t, self.tau, self.amplitude, self.baseline)

    def to_report(self) -> dict:
        u = self.uncertainties
        return {
            "model": "lifetime_single_exponential",
            "tau_ns": self.tau,
            "tau_ns_sigma": u["tau"],
            "amplitude": self.amplitude,
            "amplitude_sigma": u["amplitude"],
            "baseline": self.baseline,
            "baseline_sigma": u["baseline"],
            "chi2_reduced": self.chi2_reduced,
            "converged": self.converged,
            "iterations": self.nfev,
        }


def fit_lifetime(trace, strict: bool = True) -> LifetimeFit:
    """Weighted fit of ``baseline + A exp(-t/tau)`` on the ``t >= 0`` part of a trace."""
    t, y, s = _columns(trace)
    m = t >= 0
    t, y, s = t[m], y[m], s[m]
    if t.size < 8:
        raise DegenerateData("need at least 8 points on the decay side")
    order = np.argsort(t)
    t, y, s = t[order], y[order], s[order]
    tail = y[-max(2, t.size // 10):]
    b0 = float(np.median(tail))
    a0 = float(max(y[0] - b0, 1e-12 * max(abs(y).max(), 1e-300)))
    above = y - b0 > 0.5 * a0
    half_t = float(t[np.argmin(above)]) if not above.all() else float(t[-1])
    tau0 = max(half_t / math.log(2), float(np.median(np.diff(t))))
    params = [Param("log", tau0), Param("log", a0), Param("none", a0, b0)]
    r = weighted_least_squares(
        lambda x, q: lifetime_model(x, q[0], q[1], q[2]), t, y, s, params, [tau0, a0, b0],
        strict=strict, what="lifetime fit",
    )
    unc = dict(zip(("tau", "amplitude", "baseline"), (float(v) for v in r.sigmas)))
    return LifetimeFit(float(r.params[0]), float(r.params[1]), float(r.params[2]), unc, r.chi2_reduced,
                       r.converged, r.nfev)
