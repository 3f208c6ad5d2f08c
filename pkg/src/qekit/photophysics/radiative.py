"""Radiative lifetime of a dipole transition in a dielectric host."""

from __future__ import annotations

import math

from ..constants import CONSTANTS
from ..errors import NonPositiveInput

_HBAR_SI = CONSTANTS.hbar * CONSTANTS.e_charge  # J s
_C_SI = CONSTANTS.c * 1e-9  # m / s
# 3 pi eps0 hbar^4 c^3, so that tau = PREFACTOR / (n E^3 mu^2) in SI
PREFACTOR_SI = 3.0 * math.pi * CONSTANTS.eps0 * _HBAR_SI**4 * _C_SI**3


def radiative_lifetime(e_zpl: float, mu: float, n_d: float) -> float:
    """Radiative lifetime in ns.

    Parameters
    ----------
    e_zpl : transition energy in eV
    mu : transition dipole moment in e*Angstrom
    n_d : refractive index of the host
    """
    if not (e_zpl > 0 and mu > 0 and n_d > 0):
        raise NonPositiveInput("energy, dipole moment and refractive index must all be > 0")
    e_j = e_zpl * CONSTANTS.e_charge
    mu_si = mu * CONSTANTS.e_angstrom_si
    return PREFACTOR_SI / (n_d * e_j**3 * mu_si**2) * 1e9
