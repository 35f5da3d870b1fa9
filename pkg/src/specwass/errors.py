"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


class UnsupportedError(NotImplementedError):
    """The inputs do not satisfy the hypotheses an operation relies on."""


class NumericError(ArithmeticError):
    """A numerical routine failed to reach its tolerance."""


class InconsistencyError(ArithmeticError):
    """A computed quantity contradicts a structural property it must satisfy."""
