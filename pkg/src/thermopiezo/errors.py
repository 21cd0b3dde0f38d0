"""Exception hierarchy shared by all thermopiezo modules."""


class ThermoPiezoError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ThermoPiezoError):
    """A constructed object violates one of its invariants."""


class ParseError(ThermoPiezoError):
    """A config file could not be parsed; message names the line/key."""


class NonPositiveTemperature(ValidationError):
    """An absolute temperature is zero or negative."""


class SingularDeformation(ValidationError):
    """A deformation gradient has non-positive determinant."""


class GridTooSmall(ValidationError):
    """A grid has fewer than the minimum number of nodes per axis."""


class PartitionMismatch(ValidationError):
    """Boundary data refers to nodes outside its declared partition side."""


class SolveFailure(ThermoPiezoError):
    """The assembled linear system could not be solved (e.g. singular)."""


class NonUniformBiasTemperature(ThermoPiezoError):
    """An operation requiring a uniform bias temperature got an affine one."""


class NotPositiveDefinite(ThermoPiezoError):
    """A tensor required to be positive definite has an eigenvalue <= 0."""


class InsufficientHorizon(ThermoPiezoError):
    """A trajectory is too short for the requested transform accuracy."""


class PreconditionFailed(ThermoPiezoError):
    """A theorem check was invoked outside its hypotheses."""


class StabilityViolation(UserWarning):
    """Accuracy guard: the time step exceeds the recorded wave-resolution
    bound dt <= h / c_max.  The implicit scheme remains stable, so this is
    a warning category rather than a hard error."""
