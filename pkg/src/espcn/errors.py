"""Exception hierarchy shared across the toolkit.

The CLI maps these onto disjoint exit codes: configuration problems exit 2,
data/codec problems exit 3, numeric divergence exits 4, anything else is an
internal error (5).
"""


class EspcnError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EspcnError):
    """Invalid run configuration (bad key, missing path, malformed value)."""


class DataError(EspcnError):
    """Problem with input data: images, datasets, streams, model files."""


class NumericError(EspcnError):
    """Training or evaluation produced non-finite numbers."""


class PnmError(DataError):
    """Malformed or unsupported PGM/PPM data."""


class Y4mError(DataError):
    """Malformed or unsupported YUV4MPEG2 stream."""


class ModelFormatError(DataError):
    """Model file violates the on-disk format contract."""


class BadMagicError(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class UnsupportedVersionError(ModelFormatError):
    """Model file declares a format version this build cannot read."""


class TruncatedModelError(ModelFormatError):
    """Model file ends before all declared parameters were read."""
