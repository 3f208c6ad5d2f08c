"""JSON fit reports and their companion SVG plots."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .errors import QekitError
from .svg import Series, render


class ReportIOError(QekitError, OSError):
    """A report or plot file could not be written."""


def clean(value):
    """Make a value JSON-safe: numpy to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [clean(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def dumps(report: dict) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, no NaN tokens."""
    return json.dumps(clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def build_report(result, command: str, config: dict | None = None, extra: dict | None = None) -> dict:
    """``result.to_report()`` (or a plain dict) plus the command and resolved config."""
    body = dict(result.to_report() if hasattr(result, "to_report") else result)
    body.setdefault("converged", True)
    body.setdefault("chi2_reduced", None)
    body.update(extra or {})
    body["command"] = command
    body["qekit_version"] = __version__
    body["config"] = config or {}
    return body


def write_report(result, path, plot: bool = False, series=None, command: str = "report", config=None,
                 title: str = "", xlabel: str = "", ylabel: str = "", extra=None) -> list:
    """Write ``path`` (JSON) and, with ``plot``, ``path`` with an ``.svg`` suffix.

    Returns the written paths.
    """
    path = Path(path)
    report = build_report(result, command, config, extra)
    written = []
    try:
        path.write_text(dumps(report))
        written.append(path)
        if plot:
            svg_path = path.with_suffix(".svg")
            svg_path.write_text(render(series or [], title or command, xlabel, ylabel))
            written.append(svg_path)
    except OSError as exc:
        raise ReportIOError(f"cannot write report: {exc}") from exc
    return written


__all__ = ["Series", "ReportIOError", "build_report", "clean", "dumps", "write_report"]
