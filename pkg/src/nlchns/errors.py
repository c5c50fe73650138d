"""Exception types raised across the package."""


class NLCHNSError(Exception):
    """Base class for all package errors."""


class GridMismatch(NLCHNSError, ValueError):
    pass


class NonsymmetricKernel(NLCHNSError, ValueError):
    pass


class PhaseOutOfRange(NLCHNSError, ArithmeticError):
    """A singular potential or degenerate mobility saw |phi| >= 1."""

    def __init__(self, location, value):
        self.location = tuple(int(i) for i in location)
        self.value = float(value)
        super().__init__(f"|phi| >= 1 at cell {self.location}: phi = {self.value!r}")


class NonzeroMean(NLCHNSError, ValueError):
    pass


class NoConvergence(NLCHNSError, ArithmeticError):
    def __init__(self, message, residual=float("nan")):
        self.residual = float(residual)
        super().__init__(f"{message} (residual={self.residual:.3e})")


class NewtonDiverged(NoConvergence):
    def __init__(self, iterations, residual):
        self.iterations = int(iterations)
        super().__init__(f"Newton failed after {iterations} iterations", residual)


class ViscosityRangeViolation(NLCHNSError, ValueError):
    pass


class CFLViolation(NLCHNSError, ArithmeticError):
    def __init__(self, cfl, limit):
        self.cfl = float(cfl)
        self.limit = float(limit)
        super().__init__(f"advective CFL {self.cfl:.3g} exceeds {self.limit:.3g}")


class StepRejected(NLCHNSError, ArithmeticError):
    """Repeated step rejection drove dt below dt_min."""


class ConfigError(NLCHNSError, ValueError):
    pass


class FormatError(NLCHNSError, ValueError):
    def __init__(self, message, offset=0):
        self.offset = int(offset)
        super().__init__(f"{message} (byte offset {self.offset})")


class NonuniformSampling(NLCHNSError, ValueError):
    pass


class TrajectoryTooShort(NLCHNSError, ValueError):
    pass


class InsufficientSnapshots(NLCHNSError, ValueError):
    pass
