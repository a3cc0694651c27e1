"""Exception types raised across the package.

Parsing errors subclass ValueError so callers that only care about
"this input is bad" can catch broadly; state-machine misuse subclasses
RuntimeError.
"""


class SeqpixError(Exception):
    """Base class for all package-specific errors."""


# dataset parsing
class BadMagic(SeqpixError, ValueError):
    """File does not start with the expected magic number."""


class TruncatedFile(SeqpixError, ValueError):
    """File ends before the payload promised by its header."""


class DimensionOverflow(SeqpixError, ValueError):
    """Header declares dimensions too large to be a real dataset."""


class LabelOutOfRange(SeqpixError, ValueError):
    """Class label outside [0, 9]."""


class MalformedLine(SeqpixError, ValueError):
    """Text dataset line does not have label + expected pixel count."""


class ValueOutOfRange(SeqpixError, ValueError):
    """Pixel value outside both accepted input ranges."""


class InsufficientClassCount(SeqpixError, ValueError):
    """A class has too few images for the requested split."""


class EmptySet(SeqpixError, ValueError):
    """Operation requires at least one image."""


# model / sweep
class OutOfOrderPixel(SeqpixError, RuntimeError):
    """Pixel consumed at a position that does not match the sweep cursor."""


class SweepComplete(SeqpixError, RuntimeError):
    """Prediction requested after all pixels were consumed."""


class SizeMismatch(SeqpixError, ValueError):
    """Image length does not match the model's pixel count."""


class ShapeMismatch(SeqpixError, ValueError):
    """Image shape does not match the fitted width/height."""


class NonFiniteGradient(SeqpixError, ArithmeticError):
    """A training update produced a non-finite parameter."""


# baselines
class TooManyCenters(SeqpixError, ValueError):
    """More centers requested than training images available."""


# coder / codec
class TruncatedBuffer(SeqpixError, ValueError):
    """Code buffer holds fewer bytes than its bit count requires."""


class BadModelFile(SeqpixError, ValueError):
    """Serialized model is corrupt, unknown, or of an unsupported version."""


class HashMismatch(SeqpixError, ValueError):
    """Container was compressed with a different model."""


class CorruptRecord(SeqpixError, ValueError):
    """Container record is truncated or internally inconsistent."""
