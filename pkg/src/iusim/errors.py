"""Exception hierarchy.

Everything raised deliberately by the package derives from :class:`IusError`.
The CLI maps :class:`DataError` to exit code 2 and :class:`NumericError` to 3.
"""


class IusError(Exception):
    """Base class for all package errors."""


class DataError(IusError):
    """Bad input data or configuration (CLI exit code 2)."""


class NumericError(IusError, ArithmeticError):
    """Non-finite value produced during a computation (CLI exit code 3)."""


class ImageTypeError(DataError, TypeError):
    """Image has the wrong color space for the requested operation."""


class SizeError(DataError, ValueError):
    """Array or sample count too small for the requested operation."""


class StructureError(DataError, ValueError):
    """Inconsistent shapes inside a composite structure (e.g. a wavelet pyramid)."""


class ShapeError(DataError, ValueError):
    pass


class ConfigError(DataError, ValueError):
    """Mismatched PFM configuration, scope or model layout."""


class LabelError(DataError, ValueError):
    pass


class DegenerateDataError(DataError, ValueError):
    """Training data cannot support the requested fit (e.g. a single class)."""


class EmptySetError(DataError, ValueError):
    pass


class MissingClassError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateProfileError(NumericError, ValueError):
    """A profile vector has (near) zero norm so cosine similarity is undefined."""


class RangeError(DataError, ValueError):
    pass


class FormatError(DataError, ValueError):
    """Malformed or truncated persisted file."""


class VersionError(FormatError):
    def __init__(self, found, expected):
        super().__init__(f"unsupported format_version {found!r} (this build reads version {expected})")
        self.found = found
        self.expected = expected


class ChecksumError(FormatError):
    pass


class DeficitError(DataError):
    """Not enough eligible pool entries to honour the requested class counts."""

    def __init__(self, shortfall):
        self.shortfall = dict(shortfall)
        detail = ", ".join(f"{k}: {v}" for k, v in sorted(self.shortfall.items()))
        super().__init__(f"insufficient entries per class (shortfall {{{detail}}})")


class ProtocolError(DataError):
    pass
