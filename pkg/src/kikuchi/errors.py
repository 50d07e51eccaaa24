"""Exception types shared by the library and the command line."""


class InputError(ValueError):
    """Malformed or inconsistent user input."""


class UnsupportedModelError(InputError):
    """The model lies outside the class an operation handles."""


class DomainError(ValueError):
    """A value outside the domain of a functional (negative mass, bad degree)."""


class ResourceError(RuntimeError):
    """A size cap was exceeded."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
