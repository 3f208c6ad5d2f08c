"""Seeded noise with a counter-based generator.

Streams come from Philox-4x64-10 (Salmon et al., the Random123 family) as
shipped with numpy.  The 64-bit seed is the Philox key; replica ``r`` starts at
counter ``(0, 0, 0, r)``, so replicas occupy disjoint, deterministic slices of
the counter space and can be generated in any order or in parallel.  numpy
increments the counter before each block, so the first four 64-bit words of
replica ``r`` are Philox-4x64-10 of counter ``(1, 0, 0, r)`` under key
``(seed, 0)``; any implementation of the published algorithm reproduces them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError

NONE = "none"
POISSON = "poisson"
GAUSSIAN = "gaussian"
NOISE_KINDS = (NONE, POISSON, GAUSSIAN)
SEED_MASK = (1 << 64) - 1


def generator(seed: int, replica: int = 0) -> np.random.Generator:
    """Philox stream for ``(seed, replica)``."""
    if seed < 0 or seed > SEED_MASK:
        raise InputError("seed must fit in 64 unsigned bits")
    if replica < 0 or replica > SEED_MASK:
        raise InputError("replica index must fit in 64 unsigned bits")
    counter = np.array([0, 0, 0, replica], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))


@dataclass(frozen=True)
class NoiseModel:
    """How to perturb an exact model curve.

    ``poisson``: the curve is scaled so its maximum equals ``scale`` counts,
    then each bin is drawn from a Poisson distribution.  ``gaussian``: additive
    normal noise with standard deviation ``scale``, or ``scale`` times the
    curve maximum when ``relative`` is set.  ``none``: the curve unchanged.
    """

    kind: str = NONE
    scale: float = 0.0
    seed: int = 0
    relative: bool = False

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InputError(f"unknown noise kind {self.kind!r}")
        if self.kind != NONE and not self.scale > 0:
            raise InputError("noise scale must be > 0")

    def apply(self, values, replica: int = 0):
        """Return ``(noisy_values, sigma)``; ``values`` are already in output units.

        For ``poisson`` the values are taken as expected counts.  ``sigma`` is
        the per-point uncertainty a fitter should use: the true Poisson width
        ``sqrt(max(expected, 1))``, the Gaussian width, or for ``none`` a
        uniform 0.1% of the curve maximum.  Widths taken from the drawn counts
        would bias weighted fits low wherever counts are small.
        """
        values = np.asarray(values, dtype=float)
        top = float(np.max(np.abs(values))) if values.size else 0.0
        if self.kind == NONE:
            return values.copy(), np.full(values.shape, max(top, 1e-300) * 1e-3)
        rng = generator(self.seed, replica)
        if self.kind == POISSON:
            if np.any(values < 0):
                raise InputError("Poisson noise needs non-negative expected counts")
            counts = rng.poisson(values).astype(float)
            return counts, np.sqrt(np.maximum(values, 1.0))
        width = self.scale * top if self.relative else self.scale
        return values + rng.normal(0.0, width, values.shape), np.full(values.shape, width)
