"""Exception types shared across the package."""


class BinqError(Exception):
    """Base class for all binq-specific errors."""


class ShapeError(BinqError):
    """Operands have incompatible shapes or element counts."""


class GraphShapeError(BinqError):
    """Network does not follow the expected L/S layer alternation."""


class DegenerateScale(BinqError):
    """All candidate parameters are zero; no quantization scale exists."""


class DegenerateSigma(BinqError):
    """A batchnorm sigma quantizes to zero at the requested bit width."""


class NonFiniteInput(BinqError):
    """Quantization was asked to encode a NaN or infinity."""


class UnknownLayer(BinqError):
    """Fault target names a layer that does not exist."""


class EmptyInput(BinqError):
    """Statistics requested over an empty value list."""


class ModelFormatError(BinqError):
    """Base class for model-file decode failures."""


class BadMagic(ModelFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(ModelFormatError):
    """File version is newer than this reader understands."""


class TruncatedFile(ModelFormatError):
    """File ends before the payload promised by its header."""


class PayloadLengthMismatch(ModelFormatError):
    """Payload length disagrees with the header-derived length."""


class CountMismatch(BinqError):
    """Image and label files disagree on the record count."""
