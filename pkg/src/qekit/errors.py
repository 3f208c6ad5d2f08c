"""Exception hierarchy.

Input problems derive from :class:`InputError` (also a ``ValueError``) and map
to CLI exit code 2; optimizer failures derive from :class:`FitError` and map
to exit code 1.
"""


class QekitError(Exception):
    """Base class for all toolkit errors."""


class InputError(QekitError, ValueError):
    """Invalid or inconsistent input data."""


class FitError(QekitError, RuntimeError):
    """A fit could not produce a usable result."""


# spectra
class InvalidSpectrum(InputError):
    pass


class AxisNotCovered(InputError):
    pass


class AlreadyCalibrated(InputError):
    pass


class NonPositiveWavelength(InputError):
    pass


class ZeroEnergyBin(InputError):
    pass


class EdgesOutOfRange(InputError):
    pass


class NonMonotonicEdges(InputError):
    pass


# vibronic
class NonPositiveEnergy(InputError):
    pass


class NonPositiveTemperature(InputError):
    pass


class EmptySpectralFunction(InputError):
    pass


class NegativeHuangRhys(InputError):
    pass


class DegenerateData(InputError):
    pass


class DegenerateSeries(InputError):
    pass


# photophysics
class NoPeakFound(InputError):
    pass


class IrfExceedsRaw(InputError):
    pass


class InsufficientSpan(InputError):
    pass


class NegativeWidthInput(InputError):
    pass


class AllZeroIntensity(InputError):
    pass


class UnnormalizedHistogram(InputError):
    pass


class NonPositiveInput(InputError):
    pass


# survey
class BandOutOfRange(InputError):
    pass


class EmptyCube(InputError):
    pass


class TooFewEmitters(InputError):
    pass


# synth
class UnknownModel(InputError):
    pass


class NonConvergence(FitError):
    """Raised (or recorded) when an optimizer hits its iteration/step limits.

    ``diagnostics`` carries whatever partial state the fitter had.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateDistributionWarning(UserWarning):
    """All values of a distribution are identical; its width is zero."""
