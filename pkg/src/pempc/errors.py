"""Exception hierarchy shared by all pempc modules.

Every error raised on purpose by this package derives from :class:`PempcError`,
so callers can catch one base class at the boundary.  Validation failures are
``ValueError`` subclasses, runtime failures (loss of excitation, infeasible
control problem, diverging plant) are ``RuntimeError`` subclasses.
"""


class PempcError(Exception):
    """Base class for every deliberate pempc failure."""


class InvalidInputError(PempcError, ValueError):
    """An argument failed validation (shape, finiteness, range, consistency)."""


class WindowTooShortError(InvalidInputError):
    """A data window is too short for the requested Hankel depth."""


class ExcitationImpossibleError(InvalidInputError):
    """The signal length cannot support the requested excitation order.

    A signal of length T with m channels can only be persistently exciting of
    order L when T >= (m + 1) * L - 1; asking for more is a usage error, not a
    property of the data.
    """


class MisuseError(PempcError):
    """An operation was called in a state where it has no meaning."""


class NoFeasibleInputError(PempcError, RuntimeError):
    """Every admissible branch of the control problem is infeasible."""


class LostExcitationError(PempcError, RuntimeError):
    """The input window dropped below the rank the controller can repair."""


class SimulationDivergedError(PempcError, RuntimeError):
    """A plant update produced non-finite state or output values."""


class ConfigError(InvalidInputError):
    """An experiment configuration file or value is malformed."""
