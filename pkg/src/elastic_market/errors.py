"""Exception types shared across the package."""


class ElasticMarketError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ElasticMarketError, ValueError):
    """An argument lies outside the domain of the requested evaluation."""


class DegenerateError(ElasticMarketError):
    """The computation is undefined for this instance (e.g. zero surplus)."""


class NonConvergence(ElasticMarketError):
    """An iterative solver failed to reach its tolerance.

    Carries whatever diagnostics the solver had at the point of failure in
    the ``diagnostics`` attribute (a dict, possibly empty).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class PreconditionError(ElasticMarketError):
    """The operation's stated precondition does not hold for these inputs."""


class InfeasibleError(ElasticMarketError):
    """A requested construction has no feasible solution.

    ``min_users``, when not None, is the smallest user count that would make
    the construction feasible.
    """

    def __init__(self, message, min_users=None):
        super().__init__(message)
        self.min_users = min_users


class ParseError(ElasticMarketError):
    """A scenario file could not be read or is not valid JSON."""


class ValidationError(ElasticMarketError):
    """A scenario file parsed but violates the schema."""
