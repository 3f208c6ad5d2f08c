"""Weighted least squares on smoothly reparameterized parameters.

Every parameter is optimized through a transform ``p = f(z)``: ``none`` is an
affine map, ``log`` keeps ``p > 0``, ``logistic`` keeps ``0 < p < 1``.  Each
transform carries a scale so that ``z`` is order one, which keeps the finite
difference Jacobian well conditioned.  The covariance is propagated back to
the natural parameters with the Jacobian of the transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from ..errors import DegenerateData, NonConvergence


@dataclass(frozen=True)
class Param:
    kind: str = "none"  # none | log | logistic
    scale: float = 1.0
    offset: float = 0.0

    def natural(self, z):
        if self.kind == "log":
            return self.scale * float(np.exp(z))
        if self.kind == "logistic":
            return float(special.expit(z))
        return self.offset + self.scale * z

    def internal(self, p):
        if self.kind == "log":
            return math.log(p / self.scale)
        if self.kind == "logistic":
            p = min(max(p, 1e-12), 1 - 1e-12)
            return math.log(p / (1.0 - p))
        return (p - self.offset) / self.scale

    def slope(self, z):
        """dp/dz."""
        if self.kind == "log":
            return self.scale * float(np.exp(z))
        if self.kind == "logistic":
            p = float(special.expit(z))
            return p * (1.0 - p)
        return self.scale


@dataclass
class WlsResult:
    params: np.ndarray
    covariance: np.ndarray
    sigmas: np.ndarray
    chi2_reduced: float
    dof: int
    converged: bool
    nfev: int
    residuals: np.ndarray
    message: str


def _central_jacobian(fun, z, step=1e-6):
    f0 = fun(z)
    jac = np.empty((f0.size, z.size))
    for k in range(z.size):
        d = step * max(1.0, abs(z[k]))
        zp, zm = z.copy(), z.copy()
        zp[k] += d
        zm[k] -= d
        jac[:, k] = (fun(zp) - fun(zm)) / (2 * d)
    return jac


def weighted_least_squares(model, x, y, sigma, params, p0, max_nfev=4000, strict=True, what="fit"):
    """Minimize ``sum(((model(x, p) - y) / sigma)**2)``.

    Parameters
    ----------
    model : callable ``(x, p) -> prediction``
    params : sequence of :class:`Param`, one per entry of ``p0``.

    Raises
    ------
    NonConvergence
        If the solver stops on its evaluation limit and ``strict`` is set.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise DegenerateData("sigma must be finite and > 0")
    if y.size < len(params):
        raise DegenerateData(f"{y.size} points for {len(params)} parameters")
    inv = 1.0 / sigma

    def nat(z):
        with np.errstate(over="ignore"):
            return np.array([p.natural(v) for p, v in zip(params, z)])

    def resid(z):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = (model(x, nat(z)) - y) * inv
        return np.where(np.isfinite(r), r, 1e150)

    z0 = np.array([p.internal(v) for p, v in zip(params, p0)])
    # central differences: a one-sided Jacobian shifts the stopping point by ~1e-6 relative
    res = optimize.least_squares(
        resid, z0, method="lm", jac=lambda z: _central_jacobian(resid, z), x_scale="jac",
        ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=max_nfev,
    )
    z = res.x
    pn = nat(z)
    jz = _central_jacobian(resid, z)
    cov_z = np.linalg.pinv(jz.T @ jz, hermitian=True)
    d = np.array([p.slope(v) for p, v in zip(params, z)])
    cov = cov_z * np.outer(d, d)
    cov = 0.5 * (cov + cov.T)
    r = resid(z)
    dof = y.size - len(params)
    chi2 = float(np.sum(r * r) / dof) if dof > 0 else float("nan")
    converged = bool(res.status > 0)
    out = WlsResult(pn, cov, np.sqrt(np.clip(np.diag(cov), 0, None)), chi2, dof, converged,
                    int(res.nfev), r, str(res.message))
    if not converged and strict:
        raise NonConvergence(f"{what} did not converge: {res.message}", diagnostics={"result": out})
    return out
