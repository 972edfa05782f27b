"""Exception hierarchy shared by all gridcert modules."""


class GridCertError(Exception):
    """Base class for every error raised by gridcert."""


class InputError(GridCertError):
    """Malformed input file or argument."""


class DisconnectedNetwork(GridCertError):
    pass


class SingularYLL(GridCertError):
    pass


class DuplicateBranch(GridCertError):
    pass


class UnknownBranch(GridCertError, KeyError):
    pass


class NoConvergence(GridCertError):
    """Newton iteration failed to reach the residual tolerance."""

    def __init__(self, message, iterations=0, residual=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class PathLost(GridCertError):
    """Continuation could not follow the solution branch any further."""

    def __init__(self, message, t_last_good, trace=None):
        super().__init__(message)
        self.t_last_good = t_last_good
        self.trace = trace if trace is not None else []


class UnsupportedUncertainty(GridCertError):
    pass


class EmptyRegion(GridCertError):
    pass


class UnboundedRegion(GridCertError):
    pass


class OrderTooLow(GridCertError):
    pass


class CalibrationFailed(GridCertError):
    pass


class PreconditionViolated(GridCertError):
    pass


class NoAdmissibleKappa(GridCertError):
    pass
