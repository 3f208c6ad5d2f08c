"""Brute-force vibronic lineshape used by the generators.

Deliberately shares no code with :mod:`qekit.vibronic`: the one-phonon band is
built with ``np.interp``, multi-phonon terms with ``np.convolve`` and explicit
factorials, and the ZPL convolution by sampling the profile on a grid much
finer than its width and convolving numerically.
"""

from __future__ import annotations

import math

import numpy as np

from ..constants import K_B_EV


def _zpl(x, gamma, shape):
    if shape == "lorentzian":
        hw = gamma / 2.0
        return hw / math.pi / (x * x + hw * hw)
    sig = gamma / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    return np.exp(-x * x / (2.0 * sig * sig)) / (sig * math.sqrt(2.0 * math.pi))


def reference_sideband(psf_values, delta_e, e_max, temperature, s_hr, oversample=8, n_max=None):
    """Sideband node values on ``k * delta_e / oversample``.

    Returns ``(step, values, center_index, n_max, zpl_weight)``.
    """
    psf_values = np.asarray(psf_values, dtype=float)
    step = delta_e / oversample
    half = int(round(e_max / step))
    y = np.arange(-half, half + 1) * step
    knots_e = np.concatenate(([0.0], (np.arange(psf_values.size) + 0.5) * delta_e, [e_max]))
    knots_s = np.concatenate(([0.0], psf_values, [0.0]))
    s_abs = np.interp(np.abs(y), knots_e, knots_s)
    kt = K_B_EV * temperature
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        occ = 1.0 / (np.exp(np.abs(y) / kt) - 1.0)
        i1 = np.where(y > 0, (occ + 1.0) * s_abs, occ * s_abs)
    i1[half] = kt * psf_values[0] / (0.5 * delta_e)
    i1 = i1 / np.trapezoid(i1, dx=step)

    if n_max is None:
        n_max, cum = 0, math.exp(-s_hr)
        while cum < 1.0 - 1e-6 and n_max < 20:
            n_max += 1
            cum += math.exp(-s_hr) * s_hr**n_max / math.factorial(n_max)
    total = np.zeros(2 * half * max(n_max, 1) + 1)
    mid = (total.size - 1) // 2
    cur = None
    for n in range(1, n_max + 1):
        cur = i1 if cur is None else np.convolve(i1, cur) * step
        c = (cur.size - 1) // 2
        total[mid - c:mid + c + 1] += math.exp(-s_hr) * s_hr**n / math.factorial(n) * cur
    return step, total, mid, n_max, math.exp(-s_hr)


def reference_lineshape(
    delta_e_points,
    gamma,
    s_hr,
    psf_values,
    delta_e,
    e_max,
    temperature,
    shape="lorentzian",
    oversample=8,
    samples_per_fwhm=16,
    n_max=None,
):
    """Normalized lineshape at ``delta_e_points`` (lattice energy change, eV)."""
    x = np.asarray(delta_e_points, dtype=float)
    step, side, mid, n_max, w0 = reference_sideband(psf_values, delta_e, e_max, temperature, s_hr, oversample, n_max)
    out = w0 * _zpl(x, gamma, shape)
    if n_max == 0:
        return out
    m = max(1, int(math.ceil(samples_per_fwhm * step / gamma)))
    fine = step / m
    lo = min(x.min(), -mid * step) - 20 * gamma
    hi = max(x.max(), mid * step) + 20 * gamma
    i_lo = int(math.floor(lo / fine))
    i_hi = int(math.ceil(hi / fine))
    grid = np.arange(i_lo, i_hi + 1) * fine
    nodes = (np.arange(side.size) - mid) * step
    p_fine = np.interp(grid, nodes, side, left=0.0, right=0.0)
    n = grid.size
    kern = _zpl(np.arange(-(n - 1), n) * fine, gamma, shape)
    size = 1 << int(math.ceil(math.log2(n + kern.size)))
    conv = np.fft.irfft(np.fft.rfft(p_fine, size) * np.fft.rfft(kern, size), size)
    conv = conv[n - 1:2 * n - 1] * fine
    return out + np.interp(x, grid, conv)
