"""Exception types shared across the package.

The CLI maps these to exit codes: validation/config problems exit 1,
I/O problems (plain OSError) exit 2.
"""


class CavSearchError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CavSearchError, ValueError):
    """A configuration value or combination of values is invalid."""


class InvalidPolygonError(CavSearchError, ValueError):
    """A polygon violates its invariants (too few or degenerate vertices)."""


class EmptyComponentError(CavSearchError, ValueError):
    """An operation that needs a non-empty pixel component got an empty one."""


class ShapeError(CavSearchError, ValueError):
    """Tensor or image shapes are inconsistent with the operation."""


class CheckpointFormatError(CavSearchError, ValueError):
    """A checkpoint file is corrupt or inconsistent.

    ``offset`` is the byte position in the file where the problem was
    detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
