"""Exception hierarchy.

Each class carries the CLI exit code it maps to: 1 for configuration
problems, 2 when a physical precondition (an open gap) fails, 3 for
numerical breakdown.
"""


class PumplineError(Exception):
    exit_code = 3


class ConfigError(PumplineError, ValueError):
    exit_code = 1


class GapClosedError(PumplineError):
    """The Fermi energy is not inside a spectral gap for every s."""

    exit_code = 2

    def __init__(self, message, s=None):
        super().__init__(message)
        self.s = s


class NumericalError(PumplineError):
    exit_code = 3


class IntegrationError(NumericalError):
    pass


class RefinementError(NumericalError):
    """A grid is too coarse for the requested quantity."""


class IllConditionedError(NumericalError):
    pass


class BandShortfallError(NumericalError):
    pass
