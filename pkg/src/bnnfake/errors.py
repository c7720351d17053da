"""Exception hierarchy shared across the package."""


class BnnError(Exception):
    """Base class for every error raised by bnnfake."""


class ShapeError(BnnError, ValueError):
    """Operand shapes disagree with each other or with a ConvSpec."""


class DataError(BnnError):
    """Malformed image bytes or dataset layout."""


class NumericError(BnnError, ArithmeticError):
    """A loss or gradient became NaN or infinite."""


class ModelFormatError(BnnError):
    """A checkpoint file could not be decoded."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    def __init__(self, section: str, needed: int, available: int):
        self.section = section
        super().__init__(
            f"file truncated in section {section!r}: "
            f"needed {needed} bytes, {available} available"
        )


class ChecksumError(ModelFormatError):
    pass
