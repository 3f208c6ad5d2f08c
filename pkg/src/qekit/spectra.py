"""Spectra, axis conversions, calibration and rebinning.

A :class:`Spectrum` holds an intensity trace sampled at axis points (bin
centres).  For the Jacobian conversion the intensity is treated as a spectral
density; :func:`rebin` works on counts per bin unless ``mode="density"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .constants import HC_EV_NM
from .errors import (
    AlreadyCalibrated,
    AxisNotCovered,
    EdgesOutOfRange,
    InvalidSpectrum,
    NonMonotonicEdges,
    NonPositiveWavelength,
    ZeroEnergyBin,
)

WAVELENGTH = "wavelength_nm"
ENERGY = "energy_eV"
AXIS_KINDS = (WAVELENGTH, ENERGY)
MIN_BINS = 8


def poisson_sigma(counts):
    """Shot-noise uncertainty with a floor of one count."""
    return np.sqrt(np.maximum(np.asarray(counts, dtype=float), 1.0))


def _strictly_monotonic(a: np.ndarray) -> bool:
    d = np.diff(a)
    return bool(np.all(d > 0) or np.all(d < 0))


@dataclass(frozen=True)
class Spectrum:
    """Intensity trace on a wavelength (nm) or energy (eV) axis."""

    axis_kind: str
    axis: np.ndarray
    intensity: np.ndarray
    sigma: np.ndarray
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float)
        intensity = np.array(self.intensity, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        for a in (axis, intensity, sigma):
            a.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in dict(self.metadata).items()})

        if self.axis_kind not in AXIS_KINDS:
            raise InvalidSpectrum(f"unknown axis kind {self.axis_kind!r}")
        if axis.ndim != 1 or intensity.shape != axis.shape or sigma.shape != axis.shape:
            raise InvalidSpectrum("axis, intensity and sigma must be 1-D arrays of equal length")
        if axis.size < MIN_BINS:
            raise InvalidSpectrum(f"need at least {MIN_BINS} bins, got {axis.size}")
        if not np.all(np.isfinite(axis)) or not _strictly_monotonic(axis):
            raise InvalidSpectrum("axis must be finite and strictly monotonic")
        if not np.all(np.isfinite(intensity)):
            raise InvalidSpectrum("intensity must be finite")
        if not np.all(np.isfinite(sigma)) or np.any(sigma < 0):
            raise InvalidSpectrum("sigma must be finite and non-negative")

    @classmethod
    def from_arrays(cls, axis, intensity, sigma=None, axis_kind=WAVELENGTH, metadata=None):
        """Build a spectrum, defaulting ``sigma`` to a Poisson floor."""
        intensity = np.asarray(intensity, dtype=float)
        if sigma is None:
            sigma = poisson_sigma(intensity)
        return cls(axis_kind, axis, intensity, sigma, dict(metadata or {}))

    def __len__(self):
        return self.axis.size

    @property
    def is_calibrated(self) -> bool:
        return self.metadata.get("calibrated", "false").lower() == "true"

    def with_metadata(self, **items) -> "Spectrum":
        md = dict(self.metadata)
        md.update({k: str(v) for k, v in items.items()})
        return replace(self, metadata=md)

    def scaled(self, factor: float) -> "Spectrum":
        return replace(self, intensity=self.intensity * factor, sigma=self.sigma * abs(factor))

    def integral(self) -> float:
        """Trapezoidal integral over the axis (sign-corrected for descending axes)."""
        return abs(float(np.trapezoid(self.intensity, self.axis)))


@dataclass(frozen=True)
class Lineshape:
    """E^3-normalized density on the ZPL-relative axis ``delta_e = e_zpl_hint - E``."""

    delta_e: np.ndarray
    density: np.ndarray
    sigma: np.ndarray
    e_zpl_hint: float
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        de = np.array(self.delta_e, dtype=float)
        dens = np.array(self.density, dtype=float)
        sig = np.array(self.sigma, dtype=float)
        if de.ndim != 1 or dens.shape != de.shape or sig.shape != de.shape:
            raise InvalidSpectrum("delta_e, density and sigma must be 1-D arrays of equal length")
        if de.size >= 2 and not np.all(np.diff(de) > 0):
            raise InvalidSpectrum("delta_e must be strictly increasing")
        if not (np.all(np.isfinite(dens)) and np.all(np.isfinite(sig)) and np.all(sig >= 0)):
            raise InvalidSpectrum("density and sigma must be finite, sigma non-negative")
        for a in (de, dens, sig):
            a.setflags(write=False)
        object.__setattr__(self, "delta_e", de)
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "e_zpl_hint", float(self.e_zpl_hint))
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in dict(self.metadata).items()})

    @property
    def energy(self) -> np.ndarray:
        return self.e_zpl_hint - self.delta_e

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.delta_e))

    def window(self, lo: float, hi: float) -> "Lineshape":
        """Restrict to ``lo <= delta_e <= hi``."""
        m = (self.delta_e >= lo) & (self.delta_e <= hi)
        return replace(self, delta_e=self.delta_e[m], density=self.density[m], sigma=self.sigma[m])


@dataclass(frozen=True)
class EfficiencyCurve:
    """Relative detection efficiency versus wavelength, linearly interpolated."""

    wavelength_nm: np.ndarray
    efficiency: np.ndarray

    def __post_init__(self):
        wl = np.array(self.wavelength_nm, dtype=float)
        eff = np.array(self.efficiency, dtype=float)
        if wl.ndim != 1 or wl.shape != eff.shape or wl.size < 2:
            raise InvalidSpectrum("efficiency curve needs >= 2 matching samples")
        order = np.argsort(wl)
        wl, eff = wl[order], eff[order]
        if np.any(np.diff(wl) <= 0):
            raise InvalidSpectrum("efficiency wavelengths must be distinct")
        if not np.all(np.isfinite(eff)) or np.any(eff <= 0):
            raise InvalidSpectrum("efficiency must be strictly positive")
        object.__setattr__(self, "wavelength_nm", wl)
        object.__setattr__(self, "efficiency", eff)

    def __call__(self, wavelength_nm):
        wl = np.asarray(wavelength_nm, dtype=float)
        if np.any(wl < self.wavelength_nm[0]) or np.any(wl > self.wavelength_nm[-1]):
            raise AxisNotCovered(
                f"efficiency curve covers [{self.wavelength_nm[0]}, {self.wavelength_nm[-1]}] nm only"
            )
        return np.interp(wl, self.wavelength_nm, self.efficiency)


def _require_wavelength(spectrum: Spectrum, what: str):
    if spectrum.axis_kind != WAVELENGTH:
        raise InvalidSpectrum(f"{what} needs a wavelength-domain spectrum")


def calibrate(spectrum: Spectrum, curve: EfficiencyCurve) -> Spectrum:
    """Divide intensity and sigma by the interpolated detection efficiency."""
    _require_wavelength(spectrum, "calibrate")
    if spectrum.is_calibrated:
        raise AlreadyCalibrated("spectrum is already flagged calibrated")
    eff = curve(spectrum.axis)
    out = replace(spectrum, intensity=spectrum.intensity / eff, sigma=spectrum.sigma / eff)
    return out.with_metadata(calibrated="true")


def uncalibrate(spectrum: Spectrum, curve: EfficiencyCurve) -> Spectrum:
    """Inverse of :func:`calibrate`."""
    _require_wavelength(spectrum, "uncalibrate")
    eff = curve(spectrum.axis)
    out = replace(spectrum, intensity=spectrum.intensity * eff, sigma=spectrum.sigma * eff)
    return out.with_metadata(calibrated="false")


def to_energy(spectrum: Spectrum) -> Spectrum:
    """Convert a wavelength-domain density to an energy-domain density.

    ``E = hc / lambda`` and ``S(E) = S(lambda) * lambda**2 / hc`` so that
    ``S(E) dE = S(lambda) dlambda``.  The output axis is ascending in energy.
    """
    _require_wavelength(spectrum, "to_energy")
    lam = spectrum.axis
    if np.any(lam <= 0):
        raise NonPositiveWavelength("all wavelengths must be > 0")
    energy = HC_EV_NM / lam
    jac = lam * lam / HC_EV_NM
    order = np.argsort(energy)
    return Spectrum(
        ENERGY,
        energy[order],
        (spectrum.intensity * jac)[order],
        (spectrum.sigma * jac)[order],
        spectrum.metadata,
    )


def to_wavelength(spectrum: Spectrum) -> Spectrum:
    """Inverse of :func:`to_energy`; output ascending in wavelength."""
    if spectrum.axis_kind != ENERGY:
        raise InvalidSpectrum("to_wavelength needs an energy-domain spectrum")
    energy = spectrum.axis
    if np.any(energy <= 0):
        raise ZeroEnergyBin("all energies must be > 0")
    lam = HC_EV_NM / energy
    jac = HC_EV_NM / (lam * lam)
    order = np.argsort(lam)
    return Spectrum(
        WAVELENGTH,
        lam[order],
        (spectrum.intensity * jac)[order],
        (spectrum.sigma * jac)[order],
        spectrum.metadata,
    )


def to_lineshape(spectrum: Spectrum, e_zpl_hint: float) -> Lineshape:
    """Remove the E^3 density of states: ``L = S(E) / E**3`` on ``dE = hint - E``."""
    if spectrum.axis_kind != ENERGY:
        raise InvalidSpectrum("to_lineshape needs an energy-domain spectrum")
    energy = spectrum.axis
    if np.any(energy <= 0):
        raise ZeroEnergyBin("lineshape undefined for non-positive energy bins")
    e3 = energy**3
    delta = e_zpl_hint - energy
    order = np.argsort(delta)
    md = dict(spectrum.metadata)
    return Lineshape(
        delta[order],
        (spectrum.intensity / e3)[order],
        (spectrum.sigma / e3)[order],
        e_zpl_hint,
        md,
    )


def bin_edges(axis) -> np.ndarray:
    """Edges of the bins centred on an ascending ``axis`` (midpoints, mirrored ends)."""
    a = np.asarray(axis, dtype=float)
    mid = 0.5 * (a[1:] + a[:-1])
    return np.concatenate(([a[0] - (mid[0] - a[0])], mid, [a[-1] + (a[-1] - mid[-1])]))


def rebin(spectrum: Spectrum, target_edges: Sequence[float], mode: str = "counts") -> Spectrum:
    """Redistribute bins onto ``target_edges`` by fractional overlap.

    With ``mode="counts"`` intensities are counts per bin and are summed.  With
    ``mode="density"`` they are multiplied by the source bin width first and
    divided by the target width afterwards.  Sigma adds in quadrature, each
    source sigma weighted by its overlap fraction.  The output axis holds the
    target bin centres in ascending order.
    """
    if mode not in ("counts", "density"):
        raise ValueError("mode must be 'counts' or 'density'")
    edges = np.asarray(target_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise NonMonotonicEdges("need at least two target edges")
    d = np.diff(edges)
    if np.all(d < 0):
        edges = edges[::-1]
    elif not np.all(d > 0):
        raise NonMonotonicEdges("target edges must be strictly monotonic")

    order = np.argsort(spectrum.axis)
    axis = spectrum.axis[order]
    src_edges = bin_edges(axis)
    width = np.diff(src_edges)
    counts = spectrum.intensity[order]
    var = spectrum.sigma[order] ** 2
    if mode == "density":
        counts = counts * width
        var = var * width**2

    tol = 1e-9 * (src_edges[-1] - src_edges[0])
    if edges[0] < src_edges[0] - tol or edges[-1] > src_edges[-1] + tol:
        raise EdgesOutOfRange(
            f"target range [{edges[0]}, {edges[-1]}] exceeds source [{src_edges[0]}, {src_edges[-1]}]"
        )
    edges = np.clip(edges, src_edges[0], src_edges[-1])

    cum_counts = np.concatenate(([0.0], np.cumsum(counts)))
    cum_var = np.concatenate(([0.0], np.cumsum(var)))
    # source bin holding each target edge, and the fraction of it lying below the edge
    idx = np.clip(np.searchsorted(src_edges, edges, side="right") - 1, 0, axis.size - 1)
    frac = (edges - src_edges[idx]) / width[idx]
    below = cum_counts[idx] + frac * counts[idx]
    out_counts = np.diff(below)

    lo_i, hi_i = idx[:-1], idx[1:]
    lo_f, hi_f = frac[:-1], frac[1:]
    same = lo_i == hi_i
    out_var = np.where(
        same,
        ((hi_f - lo_f) ** 2) * var[lo_i],
        ((1 - lo_f) ** 2) * var[lo_i]
        + (hi_f**2) * var[hi_i]
        + np.maximum(cum_var[hi_i] - cum_var[np.minimum(lo_i + 1, hi_i)], 0.0),
    )
    out_sigma = np.sqrt(np.maximum(out_var, 0.0))
    centres = 0.5 * (edges[1:] + edges[:-1])
    if mode == "density":
        tw = np.diff(edges)
        out_counts = out_counts / tw
        out_sigma = out_sigma / tw
    return Spectrum(spectrum.axis_kind, centres, out_counts, out_sigma, spectrum.metadata)


def equal_count_edges(spectrum: Spectrum, target_counts: float = 400.0, mode: str = "counts") -> np.ndarray:
    """Edges grouping consecutive source bins until each group holds ``target_counts``.

    Bins already above the target stay single; a short remainder at the end is
    merged into the last group.
    """
    order = np.argsort(spectrum.axis)
    src_edges = bin_edges(spectrum.axis[order])
    counts = spectrum.intensity[order]
    if mode == "density":
        counts = counts * np.diff(src_edges)
    edges = [src_edges[0]]
    acc = 0.0
    for i, c in enumerate(counts):
        acc += max(c, 0.0)
        if acc >= target_counts:
            edges.append(src_edges[i + 1])
            acc = 0.0
    if edges[-1] != src_edges[-1]:
        if len(edges) > 1:
            edges[-1] = src_edges[-1]
        else:
            edges.append(src_edges[-1])
    return np.asarray(edges)


def rebin_equal_counts(spectrum: Spectrum, target_counts: float = 400.0, mode: str = "counts") -> Spectrum:
    return rebin(spectrum, equal_count_edges(spectrum, target_counts, mode), mode=mode)
