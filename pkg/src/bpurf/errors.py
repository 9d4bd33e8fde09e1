"""Exception types shared across the package."""


class BpurfError(Exception):
    """Base class for all engine errors."""


# --- data ingestion ---------------------------------------------------------


class MissingFile(BpurfError):
    pass


class MalformedSchema(BpurfError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UnknownTypeReference(BpurfError):
    pass


class SpatialColumnsMissing(BpurfError):
    pass


class MissingColumn(BpurfError):
    pass


class EmptyDatasetWarning(UserWarning):
    """Relation file contained a header but no rows."""


class DegenerateBbox(BpurfError):
    pass


# --- graph construction and persistence -------------------------------------


class DanglingSpatialToken(BpurfError):
    """A spatial id appears in a relation but has no coordinate row."""


class VersionMismatch(BpurfError):
    pass


class EmptyGraph(BpurfError):
    pass


# --- geometry and extraction -------------------------------------------------


class InvalidPolygon(BpurfError):
    pass


class EmptyRegion(BpurfError):
    """A boundary prompt enclosing zero spatial tokens."""


# --- numerics ----------------------------------------------------------------


class ShapeMismatch(BpurfError):
    pass


class NonFiniteValue(BpurfError):
    pass


class NotScalarLoss(BpurfError):
    pass


class BatchTooSmall(BpurfError):
    pass


class SingularSystem(BpurfError):
    pass


# --- training and evaluation --------------------------------------------------


class SamplerExhausted(BpurfError):
    """Region sampler hit max_retries without meeting the token floor."""
