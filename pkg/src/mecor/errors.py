"""Exception hierarchy.

Every error raised by the package derives from :class:`MecorError`, which is a
``ValueError`` so callers that only care about bad input can catch that.
"""


class MecorError(ValueError):
    """Base class for all package errors."""


class LengthMismatch(MecorError):
    pass


class NonFiniteInput(MecorError):
    pass


class OutOfDomain(MecorError):
    pass


class DegenerateRegressor(MecorError):
    """The regressor has zero variance (all x equal)."""


class ZeroVariance(MecorError):
    pass


class ZeroSE(MecorError):
    pass


class TooFewObservations(MecorError):
    pass


class DegenerateCalibration(MecorError):
    """The calibration sample cannot identify the error model."""


class MissingTreatment(MecorError):
    pass


class ThetaZero(MecorError):
    """An estimated error-model slope is exactly zero."""


class ThetaOneZero(ThetaZero):
    pass


class DegenerateBootstrap(MecorError):
    pass


class ConfigInvalid(MecorError):
    pass


class TooFewRows(MecorError):
    pass
