"""CODATA-2018 physical constants used throughout the package."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    h: float = 4.135667696e-15  # eV s
    c: float = 2.99792458e17  # nm / s
    k_B: float = 8.617333262e-5  # eV / K
    hbar: float = 6.582119569e-16  # eV s
    eps0: float = 8.8541878128e-12  # F / m
    e_charge: float = 1.602176634e-19  # C
    # 1 e*Angstrom expressed in debye
    e_angstrom_debye_factor: float = 4.803204712570263

    @property
    def hc(self) -> float:
        """h*c in eV nm."""
        return HC_EV_NM

    @property
    def e_angstrom_si(self) -> float:
        """1 e*Angstrom in C m."""
        return self.e_charge * 1e-10


CONSTANTS = PhysicalConstants()

# fixed rather than h*c so that round trips through text files are exact
HC_EV_NM = 1239.84198
K_B_EV = CONSTANTS.k_B
