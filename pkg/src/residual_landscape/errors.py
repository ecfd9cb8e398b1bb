"""Exception types raised by the library."""


class ShapeError(ValueError):
    """Array dimensions are incompatible."""


class DomainError(ValueError):
    """An input lies outside the domain of a function (e.g. non-finite)."""


class PreconditionError(ValueError):
    """A documented precondition of an operation does not hold."""


class ContractError(ValueError):
    """An input violates a structural contract (e.g. asymmetric matrix)."""
