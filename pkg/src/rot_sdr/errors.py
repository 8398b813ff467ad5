"""Exception types raised by the library."""


class InvalidArgument(ValueError):
    """Input violates a documented precondition."""


class UnsupportedSize(ValueError):
    """Problem is too large for an exhaustive routine."""


class RegimeMismatch(ValueError):
    """Data do not satisfy the hypotheses of the requested certificate or witness."""


class DegenerateExtraction(ArithmeticError):
    """A quaternion could not be read off a lifted matrix."""
