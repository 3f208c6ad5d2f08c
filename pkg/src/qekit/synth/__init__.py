"""Seeded forward generators used as oracles for the fitters."""

from .generators import (
    SCALAR_MODELS,
    ScalarDataset,
    SyntheticCube,
    default_vibronic_grid,
    gen_hyperspectral_cube,
    gen_scalar_dataset,
    gen_vibronic_spectrum,
)
from .reference import reference_lineshape, reference_sideband
from .rng import GAUSSIAN, NONE, POISSON, NoiseModel, generator
