"""Linewidth versus pump power and versus temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ..errors import DegenerateData, InputError, InsufficientSpan, NegativeWidthInput, NonConvergence
from ._lsq import Param, weighted_least_squares
from .peaks import DEFAULT_IRF_METHOD, correct_irf


def _columns(points, names):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"expected rows of ({', '.join(names)})")
    return arr[:, 0], arr[:, 1], arr[:, 2]


def power_broadening_model(p, gamma0, p0):
    """``gamma0 * sqrt(1 + P / p0)``."""
    return gamma0 * np.sqrt(1.0 + np.asarray(p, dtype=float) / p0)


def temperature_broadening_model(t, gamma0, a, b):
    """``gamma0 + a T + b T^5``."""
    t = np.asarray(t, dtype=float)
    return gamma0 + a * t + b * t**5


@dataclass
class PowerBroadeningFit:
    gamma0: float
    p0: float
    uncertainties: dict
    chi2_reduced: float
    converged: bool
    nfev: int
    gamma0_irf_corrected: float | None = None

    def model(self, p):
        return power_broadening_model(p, self.gamma0, self.p0)

    def to_report(self) -> dict:
        return {
            "model": "power_broadening",
            "gamma0_ev": self.gamma0,
            "gamma0_ev_sigma": self.uncertainties["gamma0"],
            "p0_power_units": self.p0,
            "p0_power_units_sigma": self.uncertainties["p0"],
            "gamma0_irf_corrected_ev": self.gamma0_irf_corrected,
            "chi2_reduced": self.chi2_reduced,
            "converged": self.converged,
            "iterations": self.nfev,
        }


def fit_power_broadening(points, irf_fwhm=None, irf_method=DEFAULT_IRF_METHOD, strict=True) -> PowerBroadeningFit:
    """Weighted fit of ``gamma = gamma0 (1 + P/P0)^(1/2)`` to (power, fwhm_ev, sigma) rows."""
    p, w, s = _columns(points, ("power", "fwhm_ev", "sigma"))
    if p.size < 3:
        raise InsufficientSpan("need at least 3 power points")
    if np.any(p < 0) or np.any(w <= 0):
        raise InputError("powers must be >= 0 and widths > 0")
    pos = p[p > 0]
    if pos.size == 0 or (p.min() > 0 and p.max() < 3 * p.min()):
        raise InsufficientSpan("powers must span at least a factor of 3")
    # gamma^2 is linear in P: gamma0^2 + (gamma0^2 / P0) P
    slope, icept = np.polyfit(p, w * w, 1, w=1.0 / (2 * w * s))
    g0 = math.sqrt(icept) if icept > 0 else float(w.min())
    p0 = g0 * g0 / slope if slope > 0 else 100.0 * p.max()
    r = weighted_least_squares(
        lambda x, q: power_broadening_model(x, q[0], q[1]), p, w, s,
        [Param("log", g0), Param("log", p0)], [g0, p0], strict=strict, what="power-broadening fit",
    )
    g0, p0 = (float(v) for v in r.params)
    unc = {"gamma0": float(r.sigmas[0]), "p0": float(r.sigmas[1])}
    corr = correct_irf(g0, irf_fwhm, irf_method) if irf_fwhm else None
    return PowerBroadeningFit(g0, p0, unc, r.chi2_reduced, r.converged, r.nfev, corr)


@dataclass
class TemperatureBroadeningFit:
    gamma0: float
    a: float
    b: float
    uncertainties: dict
    covariance: np.ndarray
    chi2_reduced: float
    converged: bool
    temperatures: np.ndarray
    component_curves: dict
    gamma0_irf_corrected: float | None = None

    def model(self, t):
        return temperature_broadening_model(t, self.gamma0, self.a, self.b)

    def to_report(self) -> dict:
        c = self.component_curves
        return {
            "model": "temperature_broadening",
            "gamma0_ev": self.gamma0,
            "gamma0_ev_sigma": self.uncertainties["gamma0"],
            "a_ev_per_k": self.a,
            "a_ev_per_k_sigma": self.uncertainties["a"],
            "b_ev_per_k5": self.b,
            "b_ev_per_k5_sigma": self.uncertainties["b"],
            "gamma0_irf_corrected_ev": self.gamma0_irf_corrected,
            "chi2_reduced": self.chi2_reduced,
            "converged": self.converged,
            "iterations": 1,
            "components": {
                "temperature_k": self.temperatures.tolist(),
                "gamma0_ev": c["gamma0"].tolist(),
                "linear_ev": c["linear"].tolist(),
                "quintic_ev": c["quintic"].tolist(),
                "total_ev": c["total"].tolist(),
            },
        }


def fit_temperature_broadening(points, irf_fwhm=None, irf_method=DEFAULT_IRF_METHOD, strict=True) -> TemperatureBroadeningFit:
    """Weighted fit of ``gamma0 + a T + b T^5`` with all three coefficients >= 0.

    The model is linear in its coefficients, so it is solved exactly as a
    bounded-variable least-squares problem; this lets ``a`` or ``b`` sit at
    zero when the data call for it.
    """
    t, w, s = _columns(points, ("temperature_k", "fwhm_ev", "sigma"))
    if t.size < 4:
        raise DegenerateData("need at least 4 temperature points")
    if np.any(t <= 0):
        raise InputError("temperatures must be > 0 K")
    if np.any(w <= 0):
        raise NegativeWidthInput("widths must be > 0")
    if np.any(s <= 0):
        raise DegenerateData("sigma must be > 0")
    tmax = float(t.max())
    u = t / tmax
    design = np.column_stack([np.ones_like(u), u, u**5]) / s[:, None]
    rhs = w / s
    res = optimize.lsq_linear(design, rhs, bounds=(0.0, np.inf), method="bvls", tol=1e-14)
    if not res.success and strict:
        raise NonConvergence(f"temperature-broadening fit did not converge: {res.message}")
    scale = np.array([1.0, 1.0 / tmax, 1.0 / tmax**5])
    g0, a, b = res.x * scale
    cov = np.linalg.pinv(design.T @ design, hermitian=True) * np.outer(scale, scale)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    resid = design @ res.x - rhs
    dof = t.size - 3
    chi2 = float(resid @ resid / dof) if dof > 0 else float("nan")
    comps = {
        "gamma0": np.full_like(t, g0),
        "linear": a * t,
        "quintic": b * t**5,
    }
    comps["total"] = comps["gamma0"] + comps["linear"] + comps["quintic"]
    corr = correct_irf(g0, irf_fwhm, irf_method) if irf_fwhm else None
    unc = {"gamma0": float(sig[0]), "a": float(sig[1]), "b": float(sig[2])}
    return TemperatureBroadeningFit(float(g0), float(a), float(b), unc, cov, chi2, bool(res.success), t, comps, corr)
