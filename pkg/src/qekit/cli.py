"""Command-line front end.

Every subcommand declares its options once in :data:`COMMANDS`; the table
drives the argparse flags, the validation of config files and the resolved
config embedded in each report.  Precedence is defaults < config file < flags.

Exit codes: 0 success, 1 fit did not converge (report still written),
2 usage, input or format errors.
"""

from __future__ import annotations

import argparse
import json
import os
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FitError, InputError, NonConvergence, QekitError
from .io import (
    POINT_COLUMNS,
    read_cube,
    read_points_csv,
    read_spectrum_csv,
    spectrum_csv_text,
    truth_from_metadata,
    write_qehc,
)
from .photophysics import (
    add_irf,
    fit_g2,
    fit_lifetime,
    fit_peak,
    fit_power_broadening,
    fit_saturation,
    fit_temperature_broadening,
    radiative_lifetime,
)
from .report import ReportIOError, Series, build_report, dumps, write_report
from .spectra import (
    ENERGY,
    WAVELENGTH,
    EfficiencyCurve,
    calibrate,
    rebin_equal_counts,
    to_energy,
    to_lineshape,
    to_wavelength,
)
from .survey import HyperspectralCube, detect_emitters, zpl_distribution
from .synth import (
    SCALAR_MODELS,
    NoiseModel,
    default_vibronic_grid,
    gen_hyperspectral_cube,
    gen_scalar_dataset,
    gen_vibronic_spectrum,
)
from .vibronic import PhononSpectralFunction, VibronicParams
from .vibronic.fit import VibronicFitConfig, fit_temperature_series, fit_vibronic

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


@dataclass
class Opt:
    default: object
    kind: str  # float | int | str | bool | optbool | floats | strs | params
    help: str = ""
    flags: tuple = ()
    choices: tuple | None = None


@dataclass
class Command:
    help: str
    options: dict
    handler: object = None
    output_required: bool = False
    aliases: dict = field(default_factory=dict)


def _opts(**kw):
    return kw


SHAPES = ("lorentzian", "gaussian")
IRF_METHODS = ("linear", "quadrature")

VIBRONIC_OPTS = _opts(
    temperature_k=Opt(None, "float", "sample temperature (default: temperature_K metadata)"),
    e_zpl_hint_ev=Opt(None, "float", "ZPL energy hint (default: spectrum maximum)"),
    zpl_shape=Opt("lorentzian", "str", "ZPL profile", choices=SHAPES),
    delta_e_mev=Opt(2.0, "float", "phonon spectral-function grid step"),
    e_max_mev=Opt(200.0, "float", "largest phonon energy"),
    oversample=Opt(4, "int", "model nodes per grid step (even)"),
    n_max=Opt("auto", "str", "highest phonon order, or 'auto'"),
    gamma_mode=Opt("free", "str", "fit the ZPL width or hold it fixed", choices=("free", "fixed")),
    gamma_zpl_uev=Opt(None, "float", "ZPL FWHM: initial value, or the fixed value"),
    smoothness=Opt(0.0, "float", "first-difference penalty on the spectral function"),
    zpl_window_fwhm=Opt(3.0, "float", "ZPL window half-width in FWHM units"),
    window_ev=Opt(None, "floats", "keep only delta_e within [lo, hi] eV"),
    efficiency=Opt(None, "str", "efficiency curve CSV (wavelength_nm,efficiency) for calibration"),
    max_nfev=Opt(500, "int", "optimizer evaluation limit"),
)

COMMANDS = {
    "convert": Command("convert a spectrum between wavelength, energy and lineshape form", _opts(
        input=Opt(None, "str", "spectrum CSV"),
        to=Opt("energy", "str", "target representation", choices=("energy", "wavelength", "lineshape")),
        e_zpl_hint_ev=Opt(None, "float", "ZPL hint for the lineshape (default: maximum)"),
        efficiency=Opt(None, "str", "efficiency curve CSV for calibration"),
        rebin_counts=Opt(None, "float", "equal-count rebinning target per bin"),
    )),
    "vibronic-fit": Command("fit the finite-temperature Huang-Rhys model", _opts(
        input=Opt(None, "str", "spectrum CSV"), plot=Opt(False, "bool", "also write an SVG"), **VIBRONIC_OPTS)),
    "temp-series": Command("fit a temperature series and test S_HR for constancy", _opts(
        input=Opt(None, "strs", "spectrum CSVs, one per temperature"),
        temperatures_k=Opt(None, "floats", "temperatures (default: temperature_K metadata)"),
        plot=Opt(False, "bool", "also write an SVG"),
        **{k: v for k, v in VIBRONIC_OPTS.items() if k != "temperature_k"})),
    "peak-fit": Command("fit a single Lorentzian or Gaussian peak", _opts(
        input=Opt(None, "str", "spectrum CSV"),
        shape=Opt("lorentzian", "str", "peak profile", choices=SHAPES, flags=("--shape", "--zpl-shape")),
        window_ev=Opt(None, "floats", "fit window [lo, hi] in eV"),
        irf_fwhm_uev=Opt(44.0, "float", "instrument response FWHM (0 to skip correction)"),
        irf_method=Opt("linear", "str", "IRF correction", choices=IRF_METHODS),
        min_snr=Opt(3.0, "float", "minimum peak SNR"),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "power-fit": Command("fit linewidth versus power", _opts(
        input=Opt(None, "str", "CSV power,fwhm_ev,sigma"),
        irf_fwhm_uev=Opt(44.0, "float", "IRF FWHM for the corrected gamma0 (0 to skip)"),
        irf_method=Opt("linear", "str", "IRF correction", choices=IRF_METHODS),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "temp-fit": Command("fit linewidth versus temperature", _opts(
        input=Opt(None, "str", "CSV temperature_k,fwhm_ev,sigma"),
        irf_fwhm_uev=Opt(44.0, "float", "IRF FWHM for the corrected gamma0 (0 to skip)"),
        irf_method=Opt("linear", "str", "IRF correction", choices=IRF_METHODS),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "sat-fit": Command("fit the saturation curve", _opts(
        input=Opt(None, "str", "CSV power,intensity_cps,sigma"),
        background_slope=Opt(False, "bool", "add a linear background term"),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "g2-fit": Command("fit the antibunching dip", _opts(
        input=Opt(None, "str", "CSV tau_ns,g2,sigma"),
        irf_fwhm_ns=Opt(None, "float", "Gaussian timing-jitter FWHM"),
        fit_normalization=Opt(False, "bool", "fit the large-delay level"),
        exclude_center=Opt(None, "optbool", "drop |tau| below one bin (default: on without IRF)"),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "lifetime-fit": Command("fit a single-exponential decay", _opts(
        input=Opt(None, "str", "CSV t_ns,counts,sigma"),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "radlife": Command("radiative lifetime of a dipole transition", _opts(
        e_zpl_ev=Opt(None, "float", "transition energy (eV)", flags=("--e-zpl", "--e-zpl-ev")),
        mu_e_angstrom=Opt(None, "float", "dipole moment (e*Angstrom)", flags=("--mu", "--mu-e-angstrom")),
        n_d=Opt(2.4, "float", "refractive index", flags=("--n", "--n-d")),
    )),
    "survey": Command("detect emitters in a hyperspectral cube", _opts(
        input=Opt(None, "str", "QEHC sidecar JSON or directory of px_<y>_<x>.csv"),
        band_nm=Opt(None, "floats", "detection band [lo, hi] nm (default: full range)"),
        min_snr=Opt(6.0, "float", "detection threshold in robust sigma"),
        min_separation_px=Opt(4.0, "float", "minimum distance between emitters"),
        bin_width_nm=Opt(10.0, "float", "ZPL histogram bin width"),
        shape=Opt("lorentzian", "str", "peak profile for ZPL fits", choices=SHAPES),
        plot=Opt(False, "bool", "also write an SVG"),
    )),
    "synth": Command("generate synthetic data with ground truth", _opts(
        model=Opt("vibronic", "str", "what to generate",
                  choices=("vibronic", "cube") + tuple(sorted(SCALAR_MODELS))),
        seed=Opt(0, "int", "64-bit noise seed"),
        replica=Opt(0, "int", "replica index (counter partition)"),
        noise=Opt("none", "str", "noise model", choices=("none", "poisson", "gaussian")),
        noise_scale=Opt(0.0, "float", "peak counts (poisson) or sigma (gaussian)"),
        relative_noise=Opt(False, "bool", "gaussian sigma relative to the curve maximum"),
        params=Opt({}, "params", "model parameters as key=value", flags=("--param",)),
        points=Opt(None, "floats", "sample points for scalar models"),
        points_range=Opt(None, "floats", "start stop count for scalar sample points"),
        e_zpl_ev=Opt(1.567, "float", "vibronic: ZPL energy"),
        gamma_zpl_uev=Opt(150.0, "float", "vibronic: ZPL FWHM"),
        s_hr=Opt(1.0, "float", "vibronic: Huang-Rhys factor"),
        temperature_k=Opt(4.0, "float", "vibronic: temperature"),
        zpl_shape=Opt("lorentzian", "str", "vibronic: ZPL profile", choices=SHAPES),
        delta_e_mev=Opt(2.0, "float", "vibronic: spectral-function grid step"),
        e_max_mev=Opt(200.0, "float", "vibronic: largest phonon energy"),
        psf_modes=Opt([0.16, 0.01, 1.0], "floats", "vibronic: energy_ev width_ev weight triples"),
        grid_nm=Opt(None, "floats", "vibronic: start stop count wavelength grid"),
        shape_px=Opt([64, 64], "floats", "cube: ny nx"),
        n_emitters=Opt(25, "int", "cube: number of emitters"),
    ), output_required=True),
}


# ---------------------------------------------------------------- config resolution


def _coerce(key, opt: Opt, value):
    if value is None:
        return None
    try:
        if opt.kind == "float":
            return float(value)
        if opt.kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("not an integer")
            return int(value)
        if opt.kind == "str":
            value = str(value)
        elif opt.kind in ("bool", "optbool"):
            if isinstance(value, str):
                if value.lower() not in ("true", "false"):
                    raise ValueError("expected true/false")
                return value.lower() == "true"
            return bool(value)
        elif opt.kind == "floats":
            value = [float(v) for v in (value if isinstance(value, (list, tuple)) else [value])]
        elif opt.kind == "strs":
            value = [str(v) for v in (value if isinstance(value, (list, tuple)) else [value])]
        elif opt.kind == "params":
            if isinstance(value, dict):
                return {str(k): float(v) for k, v in value.items()}
            out = {}
            for item in value:
                k, _, v = str(item).partition("=")
                if not _:
                    raise ValueError(f"expected key=value, got {item!r}")
                out[k.strip()] = float(v)
            return out
    except (TypeError, ValueError) as exc:
        raise InputError(f"config key {key!r}: {exc}") from None
    if opt.choices and value not in opt.choices:
        raise InputError(f"config key {key!r} must be one of {list(opt.choices)}, got {value!r}")
    return value


def load_config_file(path, command: str) -> dict:
    """TOML or JSON config; a prior report's embedded ``config`` is accepted too."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"config {path} must be a table/object")
    if "config" in data and "command" in data:
        if data["command"] != command:
            raise InputError(f"config {path} is a {data['command']!r} report, not {command!r}")
        data = data["config"]
    return data


def resolve_config(command: str, file_cfg: dict | None, flag_cfg: dict) -> dict:
    opts = COMMANDS[command].options
    cfg = {k: o.default for k, o in opts.items()}
    for source in (file_cfg or {}, flag_cfg):
        unknown = sorted(set(source) - set(opts))
        if unknown:
            raise InputError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        for k, v in source.items():
            cfg[k] = _coerce(k, opts[k], v)
    return cfg


# ---------------------------------------------------------------- argument parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qekit", description="Quantum-emitter photophysics analysis toolkit.")
    parser.add_argument("--version", action="version", version=f"qekit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, cmd in COMMANDS.items():
        p = sub.add_parser(name, help=cmd.help, description=cmd.help)
        p.add_argument("--output", "-o", default=None, help="report path (JSON); stdout when omitted")
        p.add_argument("--config", default=None, help="TOML or JSON config, or a previous report")
        for key, opt in cmd.options.items():
            flags = opt.flags or ("--" + key.replace("_", "-"),)
            kw = dict(dest=key, default=argparse.SUPPRESS, help=opt.help)
            if opt.kind in ("bool", "optbool"):
                kw["action"] = argparse.BooleanOptionalAction
            elif opt.kind in ("floats", "strs"):
                kw["nargs"] = "+"
                if key == "input":
                    flags = ("--input", "-i")
            elif opt.kind == "params":
                kw["action"] = "append"
                kw["metavar"] = "KEY=VALUE"
            else:
                if opt.choices:
                    kw["choices"] = opt.choices
                if key == "input":
                    flags = ("--input", "-i")
            p.add_argument(*flags, **kw)
    return parser


# ---------------------------------------------------------------- helpers


def _need(cfg, key, what=None):
    if cfg.get(key) in (None, [], ""):
        raise InputError(f"--{key.replace('_', '-')} is required{(' ' + what) if what else ''}")
    return cfg[key]


def _curve(x, fn, n=200):
    x = np.asarray(x, dtype=float)
    grid = np.linspace(float(x.min()), float(x.max()), n)
    return grid, fn(grid)


def _load_spectrum(cfg):
    spec = read_spectrum_csv(_need(cfg, "input"))
    eff = cfg.get("efficiency")
    if eff:
        spec = calibrate(spec, _read_efficiency(eff))
    return spec


def _read_efficiency(path) -> EfficiencyCurve:
    from .io import _split_comments, _table

    _, body = _split_comments(Path(path).read_text())
    header, data = _table(body, path)
    if header[:2] != ["wavelength_nm", "efficiency"]:
        raise InputError(f"{path}: header must start with 'wavelength_nm,efficiency'")
    return EfficiencyCurve(data[:, 0], data[:, 1])


def _energy_spectrum(spec):
    return to_energy(spec) if spec.axis_kind == WAVELENGTH else spec


def _lineshape_for(cfg, spec):
    es = _energy_spectrum(spec)
    hint = cfg.get("e_zpl_hint_ev")
    if hint is None:
        hint = float(es.axis[int(np.argmax(es.intensity))])
    ls = to_lineshape(es, hint)
    win = cfg.get("window_ev")
    if win:
        if len(win) != 2:
            raise InputError("window_ev needs two values")
        ls = ls.window(min(win), max(win))
    return ls


def _vibronic_config(cfg) -> VibronicFitConfig:
    n_max = cfg["n_max"]
    if n_max != "auto":
        try:
            n_max = int(n_max)
        except ValueError:
            raise InputError("n_max must be an integer or 'auto'") from None
    gamma = cfg["gamma_zpl_uev"]
    return VibronicFitConfig(
        delta_e_ev=cfg["delta_e_mev"] * 1e-3,
        e_max_ev=cfg["e_max_mev"] * 1e-3,
        zpl_shape=cfg["zpl_shape"],
        oversample=cfg["oversample"],
        n_max=n_max,
        gamma_mode=cfg["gamma_mode"],
        gamma_zpl_ev=gamma * 1e-6 if gamma is not None else None,
        smoothness=cfg["smoothness"],
        zpl_window_fwhm=cfg["zpl_window_fwhm"],
        max_nfev=cfg["max_nfev"],
        strict=False,
    )


def _temperature_of(cfg_value, spec):
    if cfg_value is not None:
        return float(cfg_value)
    t = spec.metadata.get("temperature_K")
    if t is None:
        raise InputError("temperature unknown: pass --temperature-k or add '# temperature_K=' metadata")
    try:
        return float(t)
    except ValueError:
        raise InputError(f"bad temperature_K metadata {t!r}") from None


def _vibronic_series(fit, data_ls):
    x = fit.delta_e
    total = fit.zpl_component + sum((c for _, _, c in fit.n_phonon_components), np.zeros_like(x))
    out = [Series("data", x, data_ls.density, "points"), Series("model", x, total), Series("ZPL", x, fit.zpl_component)]
    out += [Series(f"n={n}", x, c) for n, _, c in fit.n_phonon_components]
    return out


# ---------------------------------------------------------------- handlers
# Each handler returns (report_body, plot_series, plot_labels, exit_code).


def run_convert(cfg):
    spec = _load_spectrum(cfg)
    target = cfg["to"]
    if target == "lineshape":
        ls = _lineshape_for(cfg, spec)
        lines = [f"# e_zpl_hint_ev={ls.e_zpl_hint!r}"] + [f"# {k}={v}" for k, v in sorted(ls.metadata.items())]
        lines.append("delta_e_ev,density,sigma")
        lines += [f"{a!r},{b!r},{c!r}" for a, b, c in zip(ls.delta_e.tolist(), ls.density.tolist(), ls.sigma.tolist())]
        text = "\n".join(lines) + "\n"
    else:
        out = _energy_spectrum(spec) if target == "energy" else (
            to_wavelength(spec) if spec.axis_kind == ENERGY else spec)
        if cfg.get("rebin_counts"):
            out = rebin_equal_counts(out, cfg["rebin_counts"])
        text = spectrum_csv_text(out)
    return text


def run_vibronic(cfg):
    spec = _load_spectrum(cfg)
    t = _temperature_of(cfg["temperature_k"], spec)
    ls = _lineshape_for(cfg, spec)
    vc = _vibronic_config(cfg)
    fit = fit_vibronic(ls, vc, t)
    extra = {"n_points": int(ls.delta_e.size), "e_zpl_hint_ev": ls.e_zpl_hint}
    truth = truth_from_metadata(spec.metadata)
    if truth:
        extra["truth"] = {k: v for k, v in truth.items() if k != "psf"}
    return fit, extra, _vibronic_series(fit, ls), ("vibronic fit", "delta E (eV)", "L (arb.)"), \
        0 if fit.converged else 1


def run_temp_series(cfg):
    paths = _need(cfg, "input")
    specs = [_load_spectrum(dict(cfg, input=p)) for p in paths]
    temps = cfg.get("temperatures_k")
    if temps is not None and len(temps) != len(specs):
        raise InputError("need one temperature per input")
    temps = temps or [_temperature_of(None, s) for s in specs]
    series = [(_lineshape_for(cfg, s), t) for s, t in zip(specs, temps)]
    rep = fit_temperature_series(series, _vibronic_config(cfg))
    ok = [(t, f) for t, f in zip(rep.temperatures, rep.fits) if f is not None]
    plot = [Series("S_HR", np.array([t for t, _ in ok]), np.array([f.params.s_hr for _, f in ok]), "points"),
            Series("weighted mean", np.array([min(temps), max(temps)]), np.array([rep.s_mean, rep.s_mean]))]
    code = 0 if all(e is None for e in rep.errors) and all(f.converged for _, f in ok) else 1
    return rep, {}, plot, ("Huang-Rhys factor versus temperature", "T (K)", "S_HR"), code


def _irf(cfg, key="irf_fwhm_uev"):
    v = cfg.get(key)
    return v * 1e-6 if v else None


def run_peak(cfg):
    spec = _energy_spectrum(_load_spectrum(cfg))
    win = cfg.get("window_ev")
    if win is not None and len(win) != 2:
        raise InputError("window_ev needs two values")
    irf = _irf(cfg)
    fit = fit_peak(spec, cfg["shape"], win, irf, cfg["irf_method"], cfg["min_snr"], strict=False)
    if irf and fit.fwhm_irf_corrected is not None:
        assert math.isclose(add_irf(fit.fwhm_irf_corrected, irf, cfg["irf_method"]), fit.fwhm_raw, rel_tol=1e-9)
    e, y = fit.curve
    extra = {"curve": {"x_ev": list(e), "y": list(y)}}
    plot = [Series("data", spec.axis, spec.intensity, "points"), Series("fit", *_curve(e, fit.model, 400))]
    return fit, extra, plot, ("peak fit", "E (eV)", "intensity"), 0 if fit.converged else 1


def _points(cfg, model):
    rows, meta = read_points_csv(_need(cfg, "input"), POINT_COLUMNS[model])
    return rows, truth_from_metadata(meta)


def _scalar(fit, rows, truth, labels, model_fn=None):
    x = rows[:, 0]
    gx, gy = _curve(x, model_fn or fit.model)
    extra = {"curve": {"x": gx.tolist(), "y": gy.tolist()}}
    if truth:
        extra["truth"] = truth
    plot = [Series("data", x, rows[:, 1], "points"), Series("fit", gx, gy)]
    return fit, extra, plot, labels, 0 if fit.converged else 1


def run_power(cfg):
    rows, truth = _points(cfg, "power_broadening")
    fit = fit_power_broadening(rows, _irf(cfg), cfg["irf_method"], strict=False)
    return _scalar(fit, rows, truth, ("power broadening", "P", "FWHM (eV)"))


def run_temp_fit(cfg):
    rows, truth = _points(cfg, "temperature_broadening")
    fit = fit_temperature_broadening(rows, _irf(cfg), cfg["irf_method"], strict=False)
    body, extra, plot, labels, code = _scalar(fit, rows, truth, ("temperature broadening", "T (K)", "FWHM (eV)"))
    t = rows[:, 0]
    g = np.linspace(float(t.min()), float(t.max()), 200)
    c0 = np.full_like(g, fit.gamma0)
    c1 = fit.a * g
    c2 = fit.b * g**5
    plot = [Series("gamma0", g, c0, "area"), Series("aT", g, c1, "area"), Series("bT^5", g, c2, "area"),
            Series("total", g, c0 + c1 + c2), Series("data", t, rows[:, 1], "points")]
    return body, extra, plot, labels, code


def run_sat(cfg):
    rows, truth = _points(cfg, "saturation")
    fit = fit_saturation(rows, cfg["background_slope"], strict=False)
    return _scalar(fit, rows, truth, ("saturation", "P", "I (counts/s)"))


def run_g2(cfg):
    rows, truth = _points(cfg, "g2")
    fit = fit_g2(rows, cfg["irf_fwhm_ns"], cfg["fit_normalization"], cfg["exclude_center"], strict=False)
    return _scalar(fit, rows, truth, ("g2", "tau (ns)", "g2"))


def run_lifetime(cfg):
    rows, truth = _points(cfg, "lifetime")
    fit = fit_lifetime(rows, strict=False)
    return _scalar(fit, rows, truth, ("lifetime", "t (ns)", "counts"))


def run_radlife(cfg):
    e = _need(cfg, "e_zpl_ev")
    mu = _need(cfg, "mu_e_angstrom")
    tau = radiative_lifetime(e, mu, cfg["n_d"])
    body = {"model": "radiative_lifetime", "tau_rad_ns": tau, "e_zpl_ev": e, "mu_e_angstrom": mu, "n_d": cfg["n_d"],
            "converged": True, "chi2_reduced": None}
    return body, {}, None, None, 0


def run_survey(cfg):
    cube = read_cube(_need(cfg, "input"))
    band = cfg.get("band_nm") or [float(cube.wavelengths[0]), float(cube.wavelengths[-1])]
    if len(band) != 2:
        raise InputError("band_nm needs two values")
    recs = detect_emitters(cube, band, cfg["min_snr"], cfg["min_separation_px"], cfg["shape"])
    body = {"model": "survey", "n_emitters": len(recs), "emitters": [r.to_report() for r in recs],
            "band_nm": band, "converged": True, "chi2_reduced": None}
    plot = None
    try:
        dist = zpl_distribution(recs, cfg["bin_width_nm"])
        body["zpl_distribution"] = dist.to_report()
        centers = 0.5 * (dist.bin_edges_nm[1:] + dist.bin_edges_nm[:-1])
        g = np.linspace(dist.bin_edges_nm[0], dist.bin_edges_nm[-1], 200)
        n = dist.values_nm.size
        gauss = (n * cfg["bin_width_nm"] / (dist.sigma_nm * math.sqrt(2 * math.pi))
                 * np.exp(-0.5 * ((g - dist.mean_nm) / dist.sigma_nm) ** 2)) if dist.sigma_nm > 0 else g * 0
        plot = [Series("histogram", centers, dist.counts, "points"), Series("Gaussian", g, gauss)]
    except InputError as exc:
        body["zpl_distribution"] = None
        body["zpl_distribution_error"] = str(exc)
    return body, {}, plot, ("ZPL distribution", "ZPL (nm)", "count"), 0


def _psf_from_modes(modes, delta_e, e_max):
    if len(modes) % 3:
        raise InputError("psf_modes needs energy width weight triples")
    trip = np.asarray(modes, dtype=float).reshape(-1, 3)

    def f(e):
        out = np.zeros_like(e)
        for c, w, a in trip:
            out += a * np.exp(-0.5 * ((e - c) / w) ** 2)
        return out

    return PhononSpectralFunction.from_function(f, delta_e, e_max)


def run_synth(cfg, output: Path):
    noise = NoiseModel(cfg["noise"], cfg["noise_scale"], cfg["seed"], cfg["relative_noise"])
    model = cfg["model"]
    if model == "vibronic":
        psf = _psf_from_modes(cfg["psf_modes"], cfg["delta_e_mev"] * 1e-3, cfg["e_max_mev"] * 1e-3)
        params = VibronicParams(cfg["e_zpl_ev"], cfg["gamma_zpl_uev"] * 1e-6, cfg["s_hr"], psf,
                                cfg["temperature_k"], cfg["zpl_shape"])
        g = cfg.get("grid_nm")
        if g:
            if len(g) != 3:
                raise InputError("grid_nm needs start stop count")
            grid = np.linspace(g[0], g[1], int(g[2]))
        else:
            grid = default_vibronic_grid(params.e_zpl)
        spec = gen_vibronic_spectrum(params, grid, noise, replica=cfg["replica"])
        output.write_text(spectrum_csv_text(spec))
        return {"model": "synth_vibronic", "path": str(output), "n_points": int(grid.size)}
    if model == "cube":
        ny, nx = (int(v) for v in cfg["shape_px"])
        sc = gen_hyperspectral_cube(cfg["n_emitters"], (ny, nx), seed=cfg["seed"])
        write_qehc(HyperspectralCube(sc.wavelengths, sc.data), output)
        truth_path = output.with_name(output.name + ".truth.json")
        truth_path.write_text(dumps({"positions_yx": sc.positions, "zpl_nm": sc.zpl_nm}))
        return {"model": "synth_cube", "path": str(output), "truth": str(truth_path)}
    if cfg.get("points"):
        x = np.asarray(cfg["points"], dtype=float)
    elif cfg.get("points_range"):
        a, b, n = cfg["points_range"]
        x = np.linspace(a, b, int(n))
    else:
        raise InputError("scalar models need --points or --points-range")
    ds = gen_scalar_dataset(model, cfg["params"], x, noise, cfg["replica"])
    output.write_text(ds.to_csv())
    return {"model": f"synth_{model}", "path": str(output), "n_points": int(x.size)}


HANDLERS = {
    "vibronic-fit": run_vibronic,
    "temp-series": run_temp_series,
    "peak-fit": run_peak,
    "power-fit": run_power,
    "temp-fit": run_temp_fit,
    "sat-fit": run_sat,
    "g2-fit": run_g2,
    "lifetime-fit": run_lifetime,
    "radlife": run_radlife,
    "survey": run_survey,
}


# ---------------------------------------------------------------- entry point


def _execute(args) -> int:
    command = args.command
    flag_cfg = {k: v for k, v in vars(args).items() if k not in ("command", "output", "config")}
    file_cfg = load_config_file(args.config, command) if args.config else None
    cfg = resolve_config(command, file_cfg, flag_cfg)
    output = Path(args.output) if args.output else None

    if command == "convert":
        text = run_convert(cfg)
        text = f"# qekit_config={json.dumps(cfg, sort_keys=True)}\n" + text
        if output:
            output.write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    if command == "synth":
        if output is None:
            raise InputError("synth needs --output")
        info = run_synth(cfg, output)
        print(dumps(dict(info, config=cfg)), end="")
        return 0

    plot = bool(cfg.get("plot"))
    if plot and output is None:
        raise InputError("--plot needs --output")
    try:
        result, extra, series, labels, code = HANDLERS[command](cfg)
    except NonConvergence as exc:
        fit = exc.diagnostics.get("fit") or exc.diagnostics.get("result")
        if fit is None or not hasattr(fit, "to_report"):
            raise
        result, extra, series, labels, code = fit, {}, None, None, 1

    if command == "radlife":
        print(f"tau_rad = {result['tau_rad_ns']:.6g} ns")
        if output is None:
            return code
    title, xl, yl = labels or ("", "", "")
    if output is None:
        sys.stdout.write(dumps(build_report(result, command, cfg, extra)))
    else:
        write_report(result, output, plot and series is not None, series, command, cfg, title, xl, yl, extra)
    return code


def dispatch(argv=None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _execute(args)
    except BrokenPipeError:
        # reader closed stdout early (e.g. piped into head); not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (InputError, ReportIOError) as exc:
        print(f"qekit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FitError as exc:
        print(f"qekit {args.command}: fit failed: {exc}", file=sys.stderr)
        return 1
    except QekitError as exc:
        print(f"qekit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"qekit {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
