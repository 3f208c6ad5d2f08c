"""Hyperspectral maps: emitter detection, spectrum extraction, ZPL statistics."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .constants import HC_EV_NM
from .errors import (
    BandOutOfRange,
    DegenerateDistributionWarning,
    EmptyCube,
    FitError,
    InputError,
    TooFewEmitters,
)
from .parallel import thread_cap
from .photophysics.peaks import LORENTZIAN, PeakFit, fit_peak
from .spectra import WAVELENGTH, Spectrum, poisson_sigma, to_energy

MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class HyperspectralCube:
    """Intensity per (y, x, wavelength)."""

    wavelengths: np.ndarray
    data: np.ndarray
    pixel_pitch_um: float | None = None

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=float)
        data = np.array(self.data, dtype=float)
        if wl.ndim != 1 or wl.size < 2 or not np.all(np.diff(wl) > 0):
            raise InputError("wavelengths must be a strictly increasing 1-D array")
        if data.ndim != 3 or data.shape[2] != wl.size:
            raise InputError(f"data must have shape (ny, nx, {wl.size}), got {data.shape}")
        if data.size == 0:
            raise EmptyCube("cube has no pixels")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise InputError("cube intensities must be finite and >= 0")
        wl.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "data", data)

    @property
    def ny(self) -> int:
        return self.data.shape[0]

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    def spectrum(self, y: int, x: int, metadata=None) -> Spectrum:
        counts = self.data[y, x]
        md = {"pixel_y": str(y), "pixel_x": str(x)}
        md.update(metadata or {})
        return Spectrum(WAVELENGTH, self.wavelengths, counts, poisson_sigma(counts), md)

    def band_image(self, band_nm) -> np.ndarray:
        """Trapezoidal integral over the wavelength band."""
        lo, hi = sorted(band_nm)
        wl = self.wavelengths
        if lo < wl[0] or hi > wl[-1]:
            raise BandOutOfRange(f"band [{lo}, {hi}] nm outside [{wl[0]}, {wl[-1]}] nm")
        m = (wl >= lo) & (wl <= hi)
        if m.sum() < 2:
            raise BandOutOfRange("band contains fewer than two wavelength channels")
        return np.trapezoid(self.data[:, :, m], wl[m], axis=2)


@dataclass
class EmitterRecord:
    x: int
    y: int
    snr: float
    spectrum: Spectrum = field(repr=False)
    zpl_nm: float
    peak: PeakFit | None = field(default=None, repr=False)
    fit_error: str | None = None

    def to_report(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "snr": self.snr,
            "zpl_nm": self.zpl_nm,
            "fwhm_raw_ev": self.peak.fwhm_raw if self.peak else None,
            "fit_error": self.fit_error,
        }


def _periodic_distance(a, b, shape):
    dy = abs(a[0] - b[0])
    dx = abs(a[1] - b[1])
    dy = min(dy, shape[0] - dy)
    dx = min(dx, shape[1] - dx)
    return math.hypot(dy, dx)


def find_hotspots(image: np.ndarray, min_snr: float, min_separation_px: float):
    """Local maxima of the smoothed image above ``median + min_snr * sigma_MAD``.

    Returns ``[(y, x, snr), ...]`` after suppressing the fainter of any pair
    closer than ``min_separation_px`` (distances wrap around the map edges).
    """
    smooth = ndimage.gaussian_filter(np.asarray(image, dtype=float), 1.0, mode="wrap")
    med = float(np.median(smooth))
    mad = float(np.median(np.abs(smooth - med))) * MAD_TO_SIGMA
    top = float(np.max(np.abs(smooth)))
    if top == 0:
        raise EmptyCube("band image is identically zero")
    noise = mad if mad > 0 else top * 1e-12
    peaks = smooth == ndimage.maximum_filter(smooth, size=3, mode="wrap")
    snr = (smooth - med) / noise
    ys, xs = np.nonzero(peaks & (snr > min_snr))
    cand = sorted(zip(ys.tolist(), xs.tolist()), key=lambda p: (-smooth[p], p))
    kept = []
    for p in cand:
        if all(_periodic_distance(p, q, smooth.shape) >= min_separation_px for q in kept):
            kept.append(p)
    out = [(y, x, float(snr[y, x])) for y, x in kept]
    out.sort(key=lambda r: (-r[2], r[0], r[1]))
    return out


def detect_emitters(cube: HyperspectralCube, band_nm, min_snr: float = 6.0, min_separation_px: float = 4.0,
                    shape: str = LORENTZIAN, workers: int | None = None) -> list:
    """Find emitters in a band, extract their spectra and fit each ZPL.

    Records are ordered by descending SNR, then by ``(y, x)``.  A spectrum
    whose peak fit fails still yields a record, with ``zpl_nm`` NaN and the
    error in ``fit_error``.
    """
    if not min_snr > 0:
        raise InputError("min_snr must be > 0")
    if not min_separation_px >= 1:
        raise InputError("min_separation_px must be >= 1")
    hot = find_hotspots(cube.band_image(band_nm), min_snr, min_separation_px)
    lo, hi = sorted(band_nm)
    e_window = (HC_EV_NM / hi, HC_EV_NM / lo)

    def extract(item):
        y, x, snr = item
        spec = cube.spectrum(y, x)
        try:
            pk = fit_peak(to_energy(spec), shape, window=e_window)
            return EmitterRecord(x, y, snr, spec, HC_EV_NM / pk.center, pk)
        except (InputError, FitError) as exc:
            return EmitterRecord(x, y, snr, spec, float("nan"), None, f"{type(exc).__name__}: {exc}")

    n = workers or thread_cap()
    if n > 1 and len(hot) > 1:
        with ThreadPoolExecutor(max_workers=min(n, len(hot))) as pool:
            return list(pool.map(extract, hot))
    return [extract(h) for h in hot]


@dataclass
class ZplDistribution:
    values_nm: np.ndarray
    mean_nm: float
    sigma_nm: float
    mean_nm_sigma: float
    sigma_nm_sigma: float
    bin_edges_nm: np.ndarray
    counts: np.ndarray
    degenerate: bool = False

    def to_report(self) -> dict:
        return {
            "model": "zpl_gaussian",
            "n": int(self.values_nm.size),
            "mean_nm": self.mean_nm,
            "mean_nm_sigma": self.mean_nm_sigma,
            "sigma_nm": self.sigma_nm,
            "sigma_nm_sigma": self.sigma_nm_sigma,
            "histogram": {"edges_nm": self.bin_edges_nm.tolist(), "counts": self.counts.tolist()},
            "degenerate": self.degenerate,
        }


def zpl_distribution(records, bin_width_nm: float = 10.0, min_count: int = 5) -> ZplDistribution:
    """Histogram plus unbinned maximum-likelihood Gaussian of the ZPL wavelengths.

    Accepts :class:`EmitterRecord` objects or plain wavelengths; records with a
    failed peak fit (NaN) are skipped.  Sums use ``math.fsum`` so the result
    does not depend on input order.
    """
    if not bin_width_nm > 0:
        raise InputError("bin_width_nm must be > 0")
    vals = [float(getattr(r, "zpl_nm", r)) for r in records]
    vals = [v for v in vals if math.isfinite(v)]
    n = len(vals)
    if n < min_count:
        raise TooFewEmitters(f"need at least {min_count} emitters with a ZPL, got {n}")
    mean = math.fsum(vals) / n
    sigma = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n)
    degenerate = sigma == 0.0
    if degenerate:
        warnings.warn("all ZPL values are identical; sigma is zero", DegenerateDistributionWarning, stacklevel=2)
    arr = np.sort(np.array(vals))
    lo = math.floor(arr[0] / bin_width_nm) * bin_width_nm
    nb = max(1, math.ceil((arr[-1] - lo) / bin_width_nm + 1e-12))
    if lo + nb * bin_width_nm <= arr[-1]:
        nb += 1
    edges = lo + bin_width_nm * np.arange(nb + 1)
    counts, _ = np.histogram(arr, edges)
    return ZplDistribution(arr, mean, sigma, sigma / math.sqrt(n), sigma / math.sqrt(2 * n), edges, counts, degenerate)
