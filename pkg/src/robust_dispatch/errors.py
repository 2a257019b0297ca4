"""Exception hierarchy.

Each top-level class maps to one CLI exit code (see ``cli.EXIT_CODES``).
"""


class RobustDispatchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RobustDispatchError, ValueError):
    """Invalid run configuration or out-of-domain parameter."""


class DataError(RobustDispatchError, ValueError):
    """Malformed or inconsistent input data."""


class FeederParseError(DataError):
    """A feeder or time-series file could not be parsed."""


class FeederValidationError(DataError):
    """A feeder violates a structural or physical invariant."""


class DisconnectedGraphError(FeederValidationError):
    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__(f"buses unreachable from slack: {', '.join(self.unreachable)}")


class IncompatibleRunsError(DataError):
    """Two run directories cannot be compared."""


class SolverError(RobustDispatchError):
    """A conic or local solve failed."""


class InfeasibleProgramError(SolverError):
    def __init__(self, message, family=None):
        self.family = family
        super().__init__(message)


class NumericalFailure(SolverError):
    pass


class PlantError(RobustDispatchError):
    """The load-flow plant model failed."""


class LoadFlowDivergedError(PlantError):
    def __init__(self, sweeps, update_norm, mismatch):
        self.sweeps = sweeps
        self.update_norm = update_norm
        self.mismatch = mismatch
        super().__init__(
            f"load flow did not converge after {sweeps} sweeps "
            f"(update norm {update_norm:.3e}, power mismatch {mismatch:.3e})"
        )


class VoltageCollapseError(PlantError):
    pass
