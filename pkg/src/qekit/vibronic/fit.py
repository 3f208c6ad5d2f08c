"""Weighted least-squares inversion of the vibronic forward model.

The sideband part of the model at a data point ``x`` is ``sum_k h P_k K(x - y_k)``
with ``K`` the ZPL profile smeared over one node cell.  Evaluating that as a
dense data-by-node matrix is too slow for repeated fitting, so the kernel is
split with a smooth window ``w``: lags shorter than ``a`` go through a sparse
matrix, lags longer than ``b`` are convolved on the node grid by FFT and
carried to the data points by a cubic spline.  The far kernel is smooth on
the scale of ``b - a``, which keeps the spline error far below the model's
own discretization error.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import interpolate, optimize, signal, sparse

from ..errors import DegenerateData, DegenerateSeries, FitError, InputError, NonConvergence
from ..parallel import thread_cap
from ..spectra import Lineshape
from .model import (
    LORENTZIAN,
    ZPL_SHAPES,
    PhononSpectralFunction,
    VibronicParams,
    auto_n_max,
    one_phonon_basis,
    poisson_weights,
    zpl_hat_kernel,
    zpl_profile,
)

NEAR_CELLS = 8  # window starts to open at this many node steps
FAR_CELLS = 24  # and is fully open here


@dataclass
class VibronicFitConfig:
    """Settings for :func:`fit_vibronic`.

    ``gamma_mode`` is ``"free"`` or ``"fixed"``; a fixed width is taken from
    ``gamma_zpl_ev``.  ``zpl_window_fwhm`` sets the half-width (in FWHM units)
    of the window used to split ZPL from sideband for the initial guess and for
    the window-based ``s_hr_window`` estimate in the report.
    """

    delta_e_ev: float = 0.002
    e_max_ev: float = 0.200
    zpl_shape: str = LORENTZIAN
    oversample: int = 4
    n_max: object = "auto"
    gamma_mode: str = "free"
    gamma_zpl_ev: float | None = None
    smoothness: float = 0.0
    zpl_window_fwhm: float = 3.0
    s_hr_max: float = 25.0
    ftol: float = 1e-10
    xtol: float = 1e-12
    max_nfev: int = 500
    strict: bool = True

    def __post_init__(self):
        if self.zpl_shape not in ZPL_SHAPES:
            raise InputError(f"unknown ZPL shape {self.zpl_shape!r}")
        if self.gamma_mode not in ("free", "fixed"):
            raise InputError("gamma_mode must be 'free' or 'fixed'")
        if self.gamma_mode == "fixed" and not (self.gamma_zpl_ev or 0) > 0:
            raise InputError("gamma_mode='fixed' needs gamma_zpl_ev > 0")
        if self.smoothness < 0:
            raise InputError("smoothness must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _smooth_window(t, a, b):
    """0 for ``|t| <= a``, 1 for ``|t| >= b``, quintic smoothstep between; plus d/dt."""
    z = np.clip((np.abs(t) - a) / (b - a), 0.0, 1.0)
    w = z**3 * (10.0 - 15.0 * z + 6.0 * z * z)
    dw = np.sign(t) * 30.0 * z * z * (1.0 - z) ** 2 / (b - a)
    return w, dw


class SidebandOperator:
    """Linear map from node values on ``y_k = (k - center) h`` to ``(I_0 (x) .)(x)``.

    Built for one set of data positions, one ZPL width and one node layout.
    """

    def __init__(self, x, n_nodes, center, h, gamma, shape):
        self.x = np.asarray(x, dtype=float)
        self.n_nodes = n_nodes
        self.center = center
        self.h = h
        self.gamma = gamma
        self.shape = shape
        a, b = NEAR_CELLS * h, FAR_CELLS * h

        # near part: every data point sees the nodes within b
        half = FAR_CELLS + 1
        base = np.floor(self.x / h).astype(int) + center
        cols = base[:, None] + np.arange(-half, half + 2)[None, :]
        valid = (cols >= 0) & (cols < n_nodes)
        t = self.x[:, None] - (cols - center) * h
        k, k_t, k_g = zpl_hat_kernel(t, gamma, h, shape, derivs=True)
        w, dw = _smooth_window(t, a, b)
        keep = valid & (np.abs(t) < b)
        rows = np.broadcast_to(np.arange(self.x.size)[:, None], cols.shape)[keep]
        c = cols[keep]
        shape2 = (self.x.size, n_nodes)
        self.near = sparse.csr_matrix((h * (k * (1 - w))[keep], (rows, c)), shape=shape2)
        self.near_dx = sparse.csr_matrix((h * (k_t * (1 - w) - k * dw)[keep], (rows, c)), shape=shape2)
        self.near_dg = sparse.csr_matrix((h * (k_g * (1 - w))[keep], (rows, c)), shape=shape2)

        # far part: node-grid convolution, spline-evaluated at the data
        self.q_lo = int(math.floor(self.x.min() / h)) + center - 3
        self.q_hi = int(math.ceil(self.x.max() / h)) + center + 3
        self.j_lo = self.q_lo - (n_nodes - 1)
        lags = np.arange(self.j_lo, self.q_hi + 1) * h
        kf, _, kf_g = zpl_hat_kernel(lags, gamma, h, shape, derivs=True)
        wf, _ = _smooth_window(lags, a, b)
        self.far_kernel = h * kf * wf
        self.far_kernel_dg = h * kf_g * wf
        self.q_axis = (np.arange(self.q_lo, self.q_hi + 1) - center) * h

    def _spline(self, at_nodes, deriv=0):
        return interpolate.CubicSpline(self.q_axis, at_nodes, axis=0)(self.x, deriv)

    def _far(self, values, kernel, deriv=0):
        v = values if values.ndim == 2 else values[:, None]
        conv = signal.fftconvolve(v, kernel[:, None], mode="full", axes=0)
        out = self._spline(conv[self.q_lo - self.j_lo:self.q_hi - self.j_lo + 1], deriv)
        return out if values.ndim == 2 else out[:, 0]

    def apply_factored(self, g, d):
        """Same as ``apply`` for the columns of ``h * conv(g, d)``, without forming them.

        ``g`` lives on node indices ``0 .. n_nodes - len(d)`` so that the full
        convolution lands on the node grid.  Only the nodes that the data can
        see are built for the near part; the far part convolves ``g`` with the
        far kernel once and then with the short columns of ``d``.
        """
        m = d.shape[0]
        # near part on the node window touched by the sparse matrix
        cols = np.unique(self.near.indices)
        k0, k1 = int(cols.min()), int(cols.max())
        g_seg = _segment(g, k0 - (m - 1), k1)
        dp = signal.fftconvolve(g_seg[:, None], d, mode="valid", axes=0) * self.h
        near = self.near[:, k0:k1 + 1] @ dp
        # far part: (far kernel (x) g) (x) d on the spline nodes
        kg = signal.fftconvolve(g, self.far_kernel)
        kg_seg = _segment(kg, self.q_lo - (m - 1) - self.j_lo, self.q_hi - self.j_lo)
        at_nodes = signal.fftconvolve(kg_seg[:, None], d, mode="valid", axes=0) * self.h
        return near + self._spline(at_nodes)

    def apply(self, values):
        """Sideband part for node values (vector or matrix of columns)."""
        return self.near @ values + self._far(values, self.far_kernel)

    def apply_dx(self, values):
        return self.near_dx @ values + self._far(values, self.far_kernel, deriv=1)

    def apply_dgamma(self, values):
        return self.near_dg @ values + self._far(values, self.far_kernel_dg)


def _segment(a, lo, hi):
    """``a[lo:hi + 1]`` with zeros for indices outside ``a``."""
    out = np.zeros(hi - lo + 1)
    s0, s1 = max(lo, 0), min(hi, a.size - 1)
    if s1 >= s0:
        out[s0 - lo:s1 - lo + 1] = a[s0:s1 + 1]
    return out


def _pad(values, center, new_center, size):
    out = np.zeros(size)
    start = new_center - center
    out[start:start + values.size] = values
    return out


@dataclass
class _Parts:
    """Sideband ingredients for one psf and Huang-Rhys factor."""

    weights: np.ndarray
    components: list  # I_n padded to the full grid, n = 1 .. n_max
    psb: np.ndarray
    dpsb_ds: np.ndarray
    g: np.ndarray | None = None  # psf-gradient factors: dP/dv = h * conv(g, di1)
    di1: np.ndarray | None = None


class VibronicProblem:
    """Residuals and analytic Jacobian for one lineshape at one temperature.

    Parameter vector ``theta = [d, g, s, a, v_0 .. v_{n-1}]`` with
    ``e_zpl = e0 + d * gamma0``, ``gamma = g * gamma0``, ``s_hr = s``,
    ``amplitude = a * amp0`` and ``S(E_i) = v_i >= 0`` (a bound, so cells that
    fit to zero converge at the trust-region rate).  When the width is fixed
    the ``g`` entry is absent.  A gauge row ``mean(v) - 1`` removes the
    scale freedom of the psf, which the normalized one-phonon band cannot see.
    """

    def __init__(self, data: Lineshape, temperature: float, config: VibronicFitConfig, n_max: int,
                 e0: float, gamma0: float, amp0: float):
        self.data = data
        self.t = float(temperature)
        self.config = config
        self.n_max = int(n_max)
        self.e0, self.gamma0, self.amp0 = float(e0), float(gamma0), float(amp0)
        self.free_gamma = config.gamma_mode == "free"
        self.x = np.asarray(data.delta_e, dtype=float)
        self.y = np.asarray(data.density, dtype=float)
        sig = np.asarray(data.sigma, dtype=float)
        if np.all(sig == 0):
            sig = np.ones_like(sig)
        elif np.any(sig <= 0):
            raise DegenerateData("sigma must be > 0 for every bin (or zero everywhere for unit weights)")
        self.inv_sigma = 1.0 / sig
        self.psf_grid = PhononSpectralFunction.uniform(config.delta_e_ev, config.e_max_ev)
        self.n_cells = self.psf_grid.n_cells
        self.h = config.delta_e_ev / config.oversample
        self.half = self.n_cells * config.oversample
        self.basis = one_phonon_basis(config.delta_e_ev, self.n_cells, self.t, config.oversample)
        self.basis_colsum = self.basis.sum(axis=0) * self.h
        nm = max(self.n_max, 1)
        self.center = self.half * nm
        self.size = 2 * self.center + 1
        self._op_cache = None

    # ------------------------------------------------------------ bookkeeping
    @property
    def n_params(self) -> int:
        return 3 + self.free_gamma + self.n_cells

    @property
    def names(self) -> list:
        head = ["e_zpl", "gamma_zpl"] if self.free_gamma else ["e_zpl"]
        return head + ["s_hr", "amplitude"] + [f"psf_{i}" for i in range(self.n_cells)]

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        i = 0
        e_zpl = self.e0 + theta[i] * self.gamma0
        i += 1
        if self.free_gamma:
            gamma = theta[i] * self.gamma0
            i += 1
        else:
            gamma = self.gamma0
        s_hr = theta[i]
        amp = theta[i + 1] * self.amp0
        v = theta[i + 2:]
        return e_zpl, gamma, s_hr, amp, v

    def pack(self, e_zpl, gamma, s_hr, amp, v):
        head = [(e_zpl - self.e0) / self.gamma0]
        if self.free_gamma:
            head.append(gamma / self.gamma0)
        return np.concatenate([head, [s_hr, amp / self.amp0], np.asarray(v, dtype=float)])

    def bounds(self):
        lo = [-np.inf] + ([1e-3] if self.free_gamma else []) + [0.0, 0.0] + [0.0] * self.n_cells
        hi = [np.inf] * (1 + self.free_gamma) + [self.config.s_hr_max] + [np.inf] * (1 + self.n_cells)
        return np.array(lo), np.array(hi)

    def params_of(self, theta) -> VibronicParams:
        e_zpl, gamma, s_hr, _, v = self.split(theta)
        psf = PhononSpectralFunction(np.maximum(v, 0.0), self.config.delta_e_ev, self.config.e_max_ev)
        return VibronicParams(e_zpl, gamma, s_hr, psf, self.t, self.config.zpl_shape, self.n_max)

    # ------------------------------------------------------------ model pieces
    def parts(self, s_hr, v, with_psf_jac=False) -> _Parts:
        raw = self.basis @ v
        z = raw.sum() * self.h
        if not z > 0:
            raise FitError("phonon spectral function collapsed to zero")
        i1 = raw / z
        w = poisson_weights(s_hr, self.n_max)
        comps, cur = [], None
        for n in range(1, self.n_max + 1):
            cur = i1 if cur is None else signal.fftconvolve(i1, cur) * self.h
            comps.append(_pad(cur, self.half * n, self.center, self.size))
        psb = np.zeros(self.size)
        dpsb_ds = np.zeros(self.size)
        for n, comp in enumerate(comps, start=1):
            psb += w[n] * comp
            dpsb_ds += (w[n - 1] - w[n]) * comp
        g = di1 = None
        if with_psf_jac and self.n_max > 0:
            # dP = h * G (x) dI1 with G = S * sum_{j < n_max} w_j I_j and I_0 = delta / h
            g_center = self.half * (self.n_max - 1)
            g = np.zeros(2 * g_center + 1)
            g[g_center] = w[0] / self.h
            for j in range(1, self.n_max):
                g += w[j] * comps[j - 1][self.center - g_center:self.center + g_center + 1]
            g *= s_hr
            di1 = self.basis / z - np.outer(i1, self.basis_colsum / z)
        return _Parts(w, comps, psb, dpsb_ds, g, di1)

    def operator(self, e_zpl, gamma) -> SidebandOperator:
        key = (e_zpl, gamma)
        if self._op_cache is None or self._op_cache[0] != key:
            xm = self.x + (e_zpl - self.data.e_zpl_hint)
            op = SidebandOperator(xm, self.size, self.center, self.h, gamma, self.config.zpl_shape)
            self._op_cache = (key, op)
        return self._op_cache[1]

    def lineshape(self, theta):
        """Unit-area model density at the data points (no amplitude)."""
        e_zpl, gamma, s_hr, _, v = self.split(theta)
        p = self.parts(s_hr, v)
        xm = self.x + (e_zpl - self.data.e_zpl_hint)
        out = p.weights[0] * zpl_profile(xm, gamma, self.config.zpl_shape)
        if self.n_max > 0:
            out = out + self.operator(e_zpl, gamma).apply(p.psb)
        return out

    def _extra_rows(self, v):
        rows = [np.array([v.mean() - 1.0])]
        lam = self.config.smoothness
        if lam > 0:
            rows.append(math.sqrt(lam) * np.diff(v))
        return np.concatenate(rows)

    def residuals(self, theta):
        _, _, _, amp, v = self.split(theta)
        data = (amp * self.lineshape(theta) - self.y) * self.inv_sigma
        return np.concatenate([data, self._extra_rows(v)])

    def jacobian(self, theta):
        e_zpl, gamma, s_hr, amp, v = self.split(theta)
        p = self.parts(s_hr, v, with_psf_jac=True)
        xm = self.x + (e_zpl - self.data.e_zpl_hint)
        z0, z0_dx, z0_dg = zpl_profile(xm, gamma, self.config.zpl_shape, derivs=True)
        w0 = p.weights[0]
        lin = w0 * z0
        d_dx = w0 * z0_dx
        d_dg = w0 * z0_dg
        d_ds = -w0 * z0
        d_dv = np.zeros((self.x.size, self.n_cells))
        if self.n_max > 0:
            op = self.operator(e_zpl, gamma)
            cols = op.apply(np.column_stack([p.psb, p.dpsb_ds]))
            lin = lin + cols[:, 0]
            d_ds = d_ds + cols[:, 1]
            d_dv = op.apply_factored(p.g, p.di1)
            d_dx = d_dx + op.apply_dx(p.psb)
            d_dg = d_dg + op.apply_dgamma(p.psb)

        scale = (amp * self.inv_sigma)[:, None]
        blocks = [d_dx[:, None] * self.gamma0]
        if self.free_gamma:
            blocks.append(d_dg[:, None] * self.gamma0)
        blocks.append(d_ds[:, None])
        top = np.hstack(blocks + [np.zeros((self.x.size, 1)), d_dv]) * scale
        top[:, len(blocks)] = self.amp0 * lin * self.inv_sigma

        n_head = len(blocks) + 1
        gauge = np.zeros((1, self.n_params))
        gauge[0, n_head:] = 1.0 / self.n_cells
        extra = [gauge]
        lam = self.config.smoothness
        if lam > 0:
            d = np.zeros((self.n_cells - 1, self.n_params))
            idx = np.arange(self.n_cells - 1)
            d[idx, n_head + idx] = -1.0
            d[idx, n_head + idx + 1] = 1.0
            extra.append(math.sqrt(lam) * d)
        return np.vstack([top] + extra)

    def components(self, theta):
        """ZPL and n-phonon densities (times amplitude) at the data points."""
        e_zpl, gamma, s_hr, amp, v = self.split(theta)
        p = self.parts(s_hr, v)
        xm = self.x + (e_zpl - self.data.e_zpl_hint)
        zpl = amp * p.weights[0] * zpl_profile(xm, gamma, self.config.zpl_shape)
        if self.n_max == 0:
            return p.weights, zpl, np.zeros((self.x.size, 0))
        stacked = np.column_stack([p.weights[n] * c for n, c in enumerate(p.components, start=1)])
        return p.weights, zpl, amp * self.operator(e_zpl, gamma).apply(stacked)


# ---------------------------------------------------------------- initial guess


def _local_fwhm(x, y, i):
    half = 0.5 * y[i]

    def crossing(step):
        j = i
        while 0 <= j + step < x.size and y[j + step] > half:
            j += step
        k = j + step
        if not 0 <= k < x.size:
            return x[j]
        f = (y[j] - half) / (y[j] - y[k]) if y[j] != y[k] else 0.5
        return x[j] + f * (x[k] - x[j])

    return abs(crossing(1) - crossing(-1))


def initial_guess(data: Lineshape, config: VibronicFitConfig):
    """``(e_zpl, gamma, s_hr)`` from the peak, its local width and the ZPL window fraction."""
    x, y = data.delta_e, data.density
    i = int(np.argmax(y))
    spacing = float(np.median(np.diff(x)))
    if config.gamma_mode == "fixed":
        gamma = float(config.gamma_zpl_ev)
    else:
        gamma = _local_fwhm(x, y, i)
        if config.gamma_zpl_ev:
            gamma = float(config.gamma_zpl_ev)
        gamma = max(gamma, 0.5 * spacing, 1e-7)
    e_zpl = data.e_zpl_hint - x[i]
    frac = window_fraction(data, x[i], config.zpl_window_fwhm * gamma)
    s_hr = float(np.clip(-math.log(max(frac, 1e-6)), 0.05, 0.8 * config.s_hr_max))
    return e_zpl, gamma, s_hr


def window_fraction(data: Lineshape, center, half_width):
    """Fraction of the trapezoidal integral of the data within ``center +- half_width``."""
    x, y = data.delta_e, np.clip(data.density, 0.0, None)
    total = np.trapezoid(y, x)
    if not total > 0:
        raise DegenerateData("lineshape integral must be positive")
    m = np.abs(x - center) <= half_width
    if m.sum() < 2:
        part = float(y[np.argmin(np.abs(x - center))] * max(half_width * 2, np.median(np.diff(x))))
    else:
        part = float(np.trapezoid(y[m], x[m]))
    return min(part / total, 1.0)


# ---------------------------------------------------------------- fit results


@dataclass
class VibronicFit:
    params: VibronicParams
    covariance: np.ndarray
    param_names: list
    s_hr_sigma: float
    chi2_reduced: float
    n_phonon_components: list  # (n, weight, density at the data delta_e)
    zpl_component: np.ndarray
    residuals: np.ndarray
    amplitude: float
    converged: bool
    iterations: int
    delta_e: np.ndarray
    uncertainties: dict = field(default_factory=dict)
    s_hr_window: float = float("nan")
    config: dict = field(default_factory=dict)
    message: str = ""

    @property
    def zpl_weight(self) -> float:
        return math.exp(-self.params.s_hr)

    def physical_psf(self):
        """psf scaled so that its piecewise-linear integral equals ``S_HR``."""
        psf = self.params.psf
        area = psf.delta_e * (psf.values.sum() - 0.25 * (psf.values[0] + psf.values[-1]))
        if area <= 0:
            return psf.energies, np.zeros_like(psf.values)
        return psf.energies, psf.values * (self.params.s_hr / area)

    def to_report(self) -> dict:
        e, s = self.physical_psf()
        p = self.params
        return {
            "model": "vibronic",
            "e_zpl_ev": p.e_zpl,
            "e_zpl_ev_sigma": self.uncertainties.get("e_zpl", float("nan")),
            "gamma_zpl_ev": p.gamma_zpl,
            "gamma_zpl_ev_sigma": self.uncertainties.get("gamma_zpl", 0.0),
            "s_hr": p.s_hr,
            "s_hr_sigma": self.s_hr_sigma,
            "s_hr_window": self.s_hr_window,
            "temperature_k": p.temperature,
            "zpl_shape": p.zpl_shape,
            "zpl_weight": self.zpl_weight,
            "amplitude": self.amplitude,
            "chi2_reduced": self.chi2_reduced,
            "psf": {"e_ev": e.tolist(), "value": s.tolist()},
            "n_phonon": [{"n": n, "weight": float(w)} for n, w, _ in self.n_phonon_components],
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _check_coverage(data: Lineshape, gamma0: float, e_zpl0: float, config: VibronicFitConfig):
    x = data.delta_e + (e_zpl0 - data.e_zpl_hint)
    if x.min() > -3 * gamma0 or x.max() < config.e_max_ev:
        raise DegenerateData(
            f"data must cover delta_e in [-3 gamma, e_max] = [{-3 * gamma0:.3g}, {config.e_max_ev:.3g}] eV"
            f" around the ZPL; got [{x.min():.3g}, {x.max():.3g}]"
        )


def _solve(problem: VibronicProblem, theta0, config: VibronicFitConfig):
    lo, hi = problem.bounds()
    pad = 1e-12 * (np.abs(np.where(np.isfinite(lo), lo, 0.0)) + 1)
    theta0 = np.clip(theta0, np.where(np.isfinite(lo), lo + pad, lo), np.where(np.isfinite(hi), hi - pad, hi))
    return optimize.least_squares(
        problem.residuals,
        theta0,
        jac=problem.jacobian,
        bounds=(lo, hi),
        method="trf",
        x_scale="jac",
        ftol=config.ftol,
        xtol=config.xtol,
        gtol=None,
        max_nfev=config.max_nfev,
    )


def fit_vibronic(data: Lineshape, config: VibronicFitConfig | None = None, t: float = 4.0) -> VibronicFit:
    """Fit ``{E_ZPL, Gamma_ZPL, S_HR, S(E_i)}`` plus an amplitude to a lineshape.

    Raises
    ------
    DegenerateData
        Too few points, or the data do not reach ``[-3 gamma, e_max]``.
    NonConvergence
        Iteration limit hit (only when ``config.strict``); the partial fit is in
        ``diagnostics['fit']``.
    """
    config = config or VibronicFitConfig()
    if not t > 0:
        raise InputError("temperature must be > 0 K")
    e_zpl0, gamma0, s0 = initial_guess(data, config)
    _check_coverage(data, gamma0, e_zpl0, config)

    n_max = _n_max_for(config, s0)
    problem = VibronicProblem(data, t, config, n_max, e_zpl0, gamma0, 1.0)
    if data.delta_e.size < problem.n_params:
        raise DegenerateData(f"{data.delta_e.size} points for {problem.n_params} free parameters")
    u0 = _initial_psf(data, e_zpl0, gamma0, config, problem.n_cells)
    theta = problem.pack(e_zpl0, gamma0, s0, 1.0, u0)
    shape = problem.lineshape(theta)
    wts = problem.inv_sigma**2
    amp0 = float(np.sum(wts * shape * data.density) / np.sum(wts * shape * shape))
    if not amp0 > 0:
        raise DegenerateData("data have no positive overlap with the initial model")

    total_nfev = 0
    all_ok = True
    while True:
        problem = VibronicProblem(data, t, config, n_max, e_zpl0, gamma0, amp0)
        result = _solve(problem, problem.pack(e_zpl0, gamma0, s0, amp0, u0), config)
        total_nfev += result.nfev
        all_ok = all_ok and result.status > 0
        e_zpl0, gamma0, s0, amp0, u0 = problem.split(result.x)
        needed = _n_max_for(config, s0)
        if needed <= n_max:
            break
        n_max = needed
    fit = _finish(problem, result, config, total_nfev)
    fit.converged = fit.converged and all_ok
    if not fit.converged and config.strict:
        raise NonConvergence(
            f"vibronic fit did not converge: {result.message}",
            diagnostics={"fit": fit, "nfev": total_nfev, "status": int(result.status)},
        )
    return fit


def _initial_psf(data: Lineshape, e_zpl: float, gamma: float, config: VibronicFitConfig, n_cells: int):
    """Start values for ``S(E_i)``: the data averaged over each cell, outside the ZPL window.

    Below ``e_max`` the sideband is mostly the one-phonon band, so this puts the
    spectral weight near the right phonon energies.  From a uniform start the
    solver crawls while it moves weight and S_HR together.  Cells get a floor
    of 2% of the largest so that none starts on its bound.
    """
    x = data.delta_e + (e_zpl - data.e_zpl_hint)
    y = np.clip(data.density, 0.0, None)
    keep = np.abs(x) > config.zpl_window_fwhm * gamma
    cell = np.floor(x / config.delta_e_ev).astype(int)
    ok = keep & (cell >= 0) & (cell < n_cells)
    sums = np.bincount(cell[ok], weights=y[ok], minlength=n_cells)
    counts = np.bincount(cell[ok], minlength=n_cells)
    u = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    if not u.max() > 0:
        return np.ones(n_cells)
    u = np.maximum(u, 0.02 * u.max())
    return u / u.mean()


def _n_max_for(config: VibronicFitConfig, s_hr: float) -> int:
    """Truncation order held fixed during one solve, with head-room for S to grow."""
    if config.n_max not in (None, "auto"):
        return int(config.n_max)
    return auto_n_max(min(config.s_hr_max, max(1.5 * s_hr, s_hr + 0.5)))


def _finish(problem: VibronicProblem, result, config: VibronicFitConfig, nfev: int) -> VibronicFit:
    theta = result.x
    e_zpl, gamma, s_hr, amp, u = problem.split(theta)
    jac = problem.jacobian(theta)
    cov_scaled = np.linalg.pinv(jac.T @ jac, hermitian=True)
    cov_scaled = 0.5 * (cov_scaled + cov_scaled.T)
    # back to physical units
    scale = np.ones(problem.n_params)
    scale[0] = problem.gamma0
    i = 1
    if problem.free_gamma:
        scale[1] = problem.gamma0
        i = 2
    scale[i + 1] = problem.amp0
    cov = cov_scaled * np.outer(scale, scale)
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    names = problem.names
    unc = {n: float(s) for n, s in zip(names[: i + 2], sig[: i + 2])}

    n_data = problem.x.size
    data_res = result.fun[:n_data]
    dof = n_data - (problem.n_params - 1)
    chi2 = float(np.sum(data_res**2) / dof) if dof > 0 else float("nan")

    weights, zpl, comps = problem.components(theta)
    n_comp = [(n, float(weights[n]), comps[:, n - 1]) for n in range(1, problem.n_max + 1)]
    x_peak = problem.data.e_zpl_hint - e_zpl
    s_win = -math.log(max(window_fraction(problem.data, x_peak, config.zpl_window_fwhm * gamma), 1e-300))
    return VibronicFit(
        params=problem.params_of(theta),
        covariance=cov,
        param_names=names,
        s_hr_sigma=unc["s_hr"],
        chi2_reduced=chi2,
        n_phonon_components=n_comp,
        zpl_component=zpl,
        residuals=data_res,
        amplitude=float(amp),
        converged=bool(result.status > 0),
        iterations=int(nfev),
        delta_e=problem.x + (e_zpl - problem.data.e_zpl_hint),
        uncertainties=unc,
        s_hr_window=s_win,
        config=config.to_dict(),
        message=str(result.message),
    )


# ---------------------------------------------------------------- temperature series


@dataclass
class TemperatureSeriesReport:
    temperatures: list
    fits: list  # VibronicFit or None when the element failed
    errors: list  # error message per element, None on success
    s_mean: float
    s_mean_sigma: float
    z_scores: list
    temperature_independent: bool

    def to_report(self) -> dict:
        return {
            "model": "vibronic_temperature_series",
            "temperatures_k": list(self.temperatures),
            "s_hr": [f.params.s_hr if f else None for f in self.fits],
            "s_hr_sigma": [f.s_hr_sigma if f else None for f in self.fits],
            "errors": list(self.errors),
            "s_hr_mean": self.s_mean,
            "s_hr_mean_sigma": self.s_mean_sigma,
            "z_scores": list(self.z_scores),
            "temperature_independent": self.temperature_independent,
            "fits": [f.to_report() if f else None for f in self.fits],
            "converged": all(f is not None and f.converged for f in self.fits),
            "chi2_reduced": max((f.chi2_reduced for f in self.fits if f), default=float("nan")),
        }


def fit_temperature_series(series, config: VibronicFitConfig | None = None, z_limit: float = 3.0) -> TemperatureSeriesReport:
    """Fit each ``(lineshape, T)`` independently and test S_HR for constancy."""
    series = list(series)
    if len(series) < 2:
        raise DegenerateSeries("a temperature series needs at least two temperatures")
    config = config or VibronicFitConfig()

    def one(item):
        ls, temp = item
        try:
            return fit_vibronic(ls, config, temp), None
        except NonConvergence as exc:
            return exc.diagnostics.get("fit"), f"NonConvergence: {exc}"
        except (InputError, FitError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(series))) as pool:
        out = list(pool.map(one, series))
    fits = [f for f, _ in out]
    errors = [e for _, e in out]
    ok = [f for f, e in zip(fits, errors) if e is None]
    if not ok:
        raise FitError("every element of the temperature series failed")
    s = np.array([f.params.s_hr for f in ok])
    sig = np.array([f.s_hr_sigma for f in ok])
    if np.any(sig <= 0):
        w = np.ones_like(s)
        mean, mean_sig = float(s.mean()), float("nan")
    else:
        w = 1.0 / sig**2
        mean = float(np.sum(w * s) / np.sum(w))
        mean_sig = float(1.0 / math.sqrt(np.sum(w)))
    z = []
    for f, e in zip(fits, errors):
        if e is not None:
            z.append(None)
        elif f.s_hr_sigma > 0:
            z.append(float((f.params.s_hr - mean) / f.s_hr_sigma))
        else:
            z.append(0.0 if f.params.s_hr == mean else float("inf"))
    flag = all(v is not None and abs(v) <= z_limit for v in z)
    return TemperatureSeriesReport([float(t) for _, t in series], fits, errors, mean, mean_sig, z, flag)
