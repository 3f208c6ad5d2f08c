from .model import (
    GAUSSIAN,
    LORENTZIAN,
    GridDistribution,
    PhononSpectralFunction,
    SidebandResult,
    VibronicParams,
    auto_n_max,
    bose_einstein,
    evaluate_lineshape,
    forward_lineshape,
    n_phonon,
    one_phonon,
    poisson_weights,
    psb,
    zpl_hat_kernel,
    zpl_profile,
)
from .fit import (
    SidebandOperator,
    TemperatureSeriesReport,
    VibronicFit,
    VibronicFitConfig,
    fit_temperature_series,
    fit_vibronic,
)
