"""Exception types shared across the package.

The CLI maps these onto exit codes: InputError -> 1, DataError -> 2,
NumericError -> 3.
"""


class InputError(ValueError):
    """Invalid argument or malformed input value."""


class DataError(RuntimeError):
    """Dataset-level problem: missing files, unusable label distribution."""


class NumericError(ArithmeticError):
    """Non-finite value encountered where the contract requires finiteness."""
