"""Exception hierarchy.

Every numerical failure raised by the library derives from
:class:`NumericalError` so the command line can map it to exit code 1;
bad user input derives from :class:`ConfigError` (exit code 2).
"""


class ZRPError(Exception):
    """Base class for all library errors."""


class ConfigError(ZRPError, ValueError):
    """Invalid user input (names, parameters, files)."""


class NumericalError(ZRPError, ArithmeticError):
    """A computation could not be completed or certified."""


class UnknownName(ConfigError):
    pass


class InvalidParam(ConfigError):
    pass


class CocycleViolation(NumericalError):
    """Jump rates admit no product stationary weight."""

    def __init__(self, k, residual):
        self.k = tuple(int(v) for v in k)
        self.residual = float(residual)
        super().__init__(
            f"rates violate g1(k)g2(k-e1) = g2(k)g1(k-e2) at k={self.k} "
            f"(relative residual {self.residual:.3e})"
        )


class Diverged(NumericalError):
    """The grand-canonical series grows: the fugacity lies outside dom z."""


class NoCertificate(NumericalError):
    """No tail bound at the requested tolerance within the shell budget."""


class RadiusExhausted(NumericalError):
    """The boundary limsup did not stabilise within the radius budget."""


class SolverStall(NumericalError):
    """The variational solver did not reach its tolerance."""


class NotInDomain(NumericalError):
    """A chemical potential outside the domain of finite first moments."""


class BudgetExceeded(NumericalError):
    """Brute-force enumeration would exceed its budget."""


class OutOfRange(ConfigError):
    pass


class ZeroRate(NumericalError):
    """Every jump rate vanishes; the chain is frozen."""
