"""Exception types raised by specfun."""


class SpecfunError(Exception):
    """Base class for all library errors."""


class SingularMatrix(SpecfunError):
    """A 2x2 matrix could not be inverted."""


class NotAdmissible(SpecfunError):
    """A candidate boundary projector failed one of its constraints."""

    def __init__(self, constraint, residual):
        self.constraint = constraint
        self.residual = float(residual)
        super().__init__(f"projector constraint '{constraint}' violated (residual {residual:.3e})")


class QuadratureFailure(SpecfunError):
    """A quadrature did not reach its tolerance within the budget."""


class StepTooLarge(SpecfunError):
    """The ODE step-doubling error estimate exceeded the per-step budget."""


class InverseDrift(SpecfunError):
    """phi * psi drifted away from the identity."""


class StructureViolation(SpecfunError):
    """The diagonal data matrix does not have the required sign pattern."""


class NoConvergence(SpecfunError):
    """Picard iteration hit the iteration cap."""


class TraceRelationViolation(SpecfunError):
    """The boundary traces J and L are inconsistent."""


class RouteMismatch(SpecfunError):
    """Two evaluation routes of the same quantity disagree."""

    def __init__(self, message, route_a=None, route_b=None):
        self.route_a = route_a
        self.route_b = route_b
        super().__init__(message)


class DensityMismatch(SpecfunError):
    """The J-route and L-route densities disagree."""


class IllConditioned(SpecfunError):
    """A Volterra diagonal factor is numerically singular."""


class ConfigError(SpecfunError):
    """A run configuration is malformed; the message names the key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
