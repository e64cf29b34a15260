"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class TextrecError(Exception):
    """Base class for all package errors."""


class ShapeError(TextrecError, ValueError):
    """Tensor arguments have incompatible or invalid shapes."""


class ConfigError(TextrecError, ValueError):
    """A model or training configuration violates its invariants."""


class DataError(TextrecError, ValueError):
    """Bad input data: manifests, labels, lexicons, image files."""


class RenderError(DataError):
    """A word cannot be rendered under the given rendering spec."""


class NumericalError(TextrecError, ArithmeticError):
    """Non-finite values appeared where finite values are required."""


class CheckpointError(TextrecError, ValueError):
    """Base class for checkpoint archive problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes, unsupported version, or a truncated file."""


class CheckpointIntegrityError(CheckpointError):
    """Tensor section fails its checksum."""


class CheckpointMismatchError(CheckpointError):
    """Tensor table does not match the configuration: missing, unknown,
    or wrongly shaped entries."""
