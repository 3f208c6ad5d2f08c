"""Scalar-model fitters: linewidths, broadening laws, saturation, g2, lifetime."""

from .broadening import (
    PowerBroadeningFit,
    TemperatureBroadeningFit,
    fit_power_broadening,
    fit_temperature_broadening,
    power_broadening_model,
    temperature_broadening_model,
)
from .emission import (
    G2Fit,
    LifetimeFit,
    SaturationFit,
    fit_g2,
    fit_lifetime,
    fit_saturation,
    g2_model,
    lifetime_model,
    saturation_model,
)
from .peaks import (
    DEFAULT_IRF_FWHM_EV,
    DEFAULT_IRF_METHOD,
    PeakFit,
    add_irf,
    correct_irf,
    fit_peak,
    peak_profile,
)
from .radiative import radiative_lifetime
