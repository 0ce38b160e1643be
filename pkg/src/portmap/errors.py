"""Exception hierarchy shared by every layer of the package."""


class PortMapError(Exception):
    """Base class for all errors raised by portmap."""


class InvalidModelError(PortMapError, ValueError):
    """A state-space model has inconsistent dimensions or non-finite entries."""


class MissingPortError(PortMapError, KeyError):
    """A requested port label does not exist on the model."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing port"


class NearSingularError(PortMapError):
    """Pointwise evaluation was requested too close to a pole."""

    def __init__(self, message, pole=None):
        super().__init__(message)
        self.pole = pole


class IllPosedInterconnectionError(PortMapError):
    """The algebraic loop of a feedback interconnection is singular."""


class ModelDomainError(PortMapError, ValueError):
    """A nonlinear model was evaluated outside its physical domain."""


class NoSteadyStateError(PortMapError):
    """Newton iteration for an operating point did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PreconditionError(PortMapError):
    """An operation was called with inputs violating its precondition."""


class StructuralError(PortMapError):
    """A model lacks a port required by a structural transform."""


class NetworkError(PortMapError):
    """Bad network topology or a singular nodal assembly."""


class InfeasiblePowerFlowError(PortMapError):
    """Power flow diverged; carries the mismatch history."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class IndexInapplicableError(PortMapError):
    """The -90 degree phase index is invalid because the coefficient is unstable."""


class ScanInapplicableError(PortMapError):
    """Frequency scanning requires a small-signal stable operating point."""


class ConfigError(PortMapError):
    """Case configuration failed schema or reference validation."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path:
            where += f" at '{path}'"
        if line is not None:
            where += f" (line {line})"
        super().__init__(message + where)
        self.path = path
        self.line = line
