"""Readers and writers for spectra, point tables and hyperspectral cubes.

CSV conventions: ``#`` starts a comment line, ``# key=value`` comments carry
metadata, and the first non-comment line is the column header.
"""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path

import numpy as np

from .errors import InputError, InvalidSpectrum
from .spectra import AXIS_KINDS, WAVELENGTH, Spectrum, poisson_sigma
from .survey import HyperspectralCube

QEHC_FORMAT = "QEHC"
QEHC_VERSION = 1
QEHC_DTYPE = "f64le"

POINT_COLUMNS = {
    "power_broadening": ("power", "fwhm_ev", "sigma"),
    "temperature_broadening": ("temperature_k", "fwhm_ev", "sigma"),
    "saturation": ("power", "intensity_cps", "sigma"),
    "g2": ("tau_ns", "g2", "sigma"),
    "lifetime": ("t_ns", "counts", "sigma"),
}


def _split_comments(text: str):
    meta, body = {}, []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            kv = s[1:].strip()
            if "=" in kv:
                k, v = kv.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        body.append(s)
    return meta, body


def _table(body, path):
    if not body:
        raise InputError(f"{path}: no header row")
    rows = list(csv.reader(io.StringIO("\n".join(body))))
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric value ({exc})") from None
    if data.size == 0:
        raise InputError(f"{path}: no data rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: every row needs {len(header)} columns")
    return header, data


def read_spectrum_csv(path) -> Spectrum:
    """Read ``axis,intensity[,sigma]`` with ``# axis_kind=...`` and ``# key=value`` metadata."""
    text = Path(path).read_text()
    meta, body = _split_comments(text)
    header, data = _table(body, path)
    if header[:2] != ["axis", "intensity"] or len(header) > 3 or (len(header) == 3 and header[2] != "sigma"):
        raise InputError(f"{path}: header must be 'axis,intensity[,sigma]', got {','.join(header)!r}")
    kind = meta.pop("axis_kind", WAVELENGTH)
    if kind not in AXIS_KINDS:
        raise InvalidSpectrum(f"{path}: unknown axis_kind {kind!r}")
    sigma = data[:, 2] if len(header) == 3 else poisson_sigma(data[:, 1])
    return Spectrum(kind, data[:, 0], data[:, 1], sigma, meta)


def spectrum_csv_text(spectrum: Spectrum) -> str:
    lines = [f"# axis_kind={spectrum.axis_kind}"]
    lines += [f"# {k}={v}" for k, v in sorted(spectrum.metadata.items())]
    lines.append("axis,intensity,sigma")
    lines += [f"{a!r},{i!r},{s!r}" for a, i, s in zip(spectrum.axis.tolist(), spectrum.intensity.tolist(),
                                                        spectrum.sigma.tolist())]
    return "\n".join(lines) + "\n"


def write_spectrum_csv(spectrum: Spectrum, path) -> None:
    Path(path).write_text(spectrum_csv_text(spectrum))


def read_points_csv(path, columns):
    """Read a three-column point table; returns ``(rows, metadata)``."""
    meta, body = _split_comments(Path(path).read_text())
    header, data = _table(body, path)
    if tuple(header) != tuple(columns):
        raise InputError(f"{path}: header must be {','.join(columns)!r}, got {','.join(header)!r}")
    return data, meta


def truth_from_metadata(meta: dict) -> dict:
    """``true_<name>`` entries as floats where they parse."""
    out = {}
    for k, v in meta.items():
        if k.startswith("true_"):
            try:
                out[k[5:]] = float(v)
            except ValueError:
                out[k[5:]] = v
    return out


# ---------------------------------------------------------------- QEHC cubes


def write_qehc(cube: HyperspectralCube, sidecar_path, data_name: str | None = None) -> Path:
    """Write the JSON sidecar and the little-endian binary64 data file next to it."""
    sidecar_path = Path(sidecar_path)
    if data_name is None:
        stem = sidecar_path.name
        stem = stem[: -len(".qehc.json")] if stem.endswith(".qehc.json") else sidecar_path.stem
        data_name = stem + ".f64"
    meta = {
        "format": QEHC_FORMAT,
        "version": QEHC_VERSION,
        "nx": cube.nx,
        "ny": cube.ny,
        "wavelengths": cube.wavelengths.tolist(),
        "dtype": QEHC_DTYPE,
        "data": data_name,
    }
    if cube.pixel_pitch_um is not None:
        meta["pixel_pitch_um"] = cube.pixel_pitch_um
    np.ascontiguousarray(cube.data, dtype="<f8").tofile(sidecar_path.parent / data_name)
    sidecar_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar_path


def read_qehc(sidecar_path) -> HyperspectralCube:
    sidecar_path = Path(sidecar_path)
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{sidecar_path}: invalid JSON ({exc})") from None
    if meta.get("dtype") != QEHC_DTYPE:
        raise InputError(f"{sidecar_path}: dtype must be {QEHC_DTYPE!r}")
    try:
        nx, ny = int(meta["nx"]), int(meta["ny"])
        wl = np.asarray(meta["wavelengths"], dtype=float)
        data_path = sidecar_path.parent / meta["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{sidecar_path}: missing or malformed field ({exc})") from None
    raw = np.fromfile(data_path, dtype="<f8")
    expected = ny * nx * wl.size
    if raw.size != expected:
        raise InputError(f"{data_path}: expected {expected} values, found {raw.size}")
    return HyperspectralCube(wl, raw.reshape(ny, nx, wl.size).astype(float), meta.get("pixel_pitch_um"))


_PIXEL_RE = re.compile(r"^px_(\d+)_(\d+)\.csv$")


def read_pixel_directory(path) -> HyperspectralCube:
    """Cube from ``px_<y>_<x>.csv`` spectra sharing one wavelength axis."""
    path = Path(path)
    found = {}
    for f in sorted(path.iterdir()):
        m = _PIXEL_RE.match(f.name)
        if m:
            found[(int(m.group(1)), int(m.group(2)))] = read_spectrum_csv(f)
    if not found:
        raise InputError(f"{path}: no px_<y>_<x>.csv files")
    ny = max(k[0] for k in found) + 1
    nx = max(k[1] for k in found) + 1
    if len(found) != ny * nx:
        raise InputError(f"{path}: expected a full {ny}x{nx} grid of pixel files, found {len(found)}")
    first = next(iter(found.values()))
    if first.axis_kind != WAVELENGTH:
        raise InputError("pixel spectra must be on a wavelength axis")
    order = np.argsort(first.axis)
    wl = first.axis[order]
    data = np.empty((ny, nx, wl.size))
    for (y, x), s in found.items():
        if s.axis.shape != first.axis.shape or not np.array_equal(s.axis, first.axis):
            raise InputError(f"pixel ({y}, {x}) has a different wavelength axis")
        data[y, x] = s.intensity[order]
    return HyperspectralCube(wl, data)


def read_cube(path) -> HyperspectralCube:
    path = Path(path)
    if path.is_dir():
        return read_pixel_directory(path)
    return read_qehc(path)
