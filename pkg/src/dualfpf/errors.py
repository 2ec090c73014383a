"""Exception types raised across the package."""


class DualFPFError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DualFPFError, ValueError):
    pass


class NonPositiveDefinite(DualFPFError, ValueError):
    """A covariance-type matrix failed its positive-definiteness check."""

    def __init__(self, name, time=None, detail=""):
        self.name = name
        self.time = time
        where = "" if time is None else f" at t={time:.6g}"
        msg = f"{name} is not symmetric positive definite{where}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SingularMatrix(DualFPFError, ArithmeticError):
    pass


class LostPositivity(DualFPFError, ArithmeticError):
    """The integrated Riccati covariance left the PSD cone (step too coarse)."""


class InvalidCount(DualFPFError, ValueError):
    pass


class SingularEmpiricalCovariance(DualFPFError, ArithmeticError):
    pass


class GridMismatch(DualFPFError, ValueError):
    pass


class ConfigError(DualFPFError, ValueError):
    pass
