"""Exception types shared across the package.

The split matters for the service/CLI layer: usage problems map to exit
code 2 (argparse does this on its own), data problems to 3, numeric
failures to 4.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible. Message names both shapes."""


class DataError(ValueError):
    """Input data is malformed: bad file, non-finite values, bad header."""


class NumericError(ArithmeticError):
    """Numeric failure at run time: divergence, domain violation."""
