"""Exception types raised across the package."""


class AugDFError(Exception):
    """Base class for every error raised by augdf."""


# data
class SchemaError(AugDFError):
    pass


class UnknownCategory(AugDFError):
    pass


class MissingValue(AugDFError):
    pass


class ShapeError(AugDFError):
    pass


class TooFewSamples(AugDFError):
    pass


class BadK(AugDFError):
    pass


# forest / augment / cascade
class EmptyInput(AugDFError):
    pass


class WidthMismatch(AugDFError):
    pass


class BadDimension(AugDFError):
    pass


class ZeroImportance(AugDFError):
    pass


class LayerLimitReached(AugDFError):
    pass


class BadLayerIndex(AugDFError):
    pass


class EmptyModel(AugDFError):
    pass


class FormatError(AugDFError):
    """A serialized container could not be decoded."""


# search
class IndexOutOfGrid(AugDFError):
    pass


class GridExhausted(AugDFError):
    pass


# cli
class ConfigError(AugDFError):
    pass


class ScheduleMismatch(AugDFError):
    pass


class SchemaMismatch(AugDFError):
    pass
