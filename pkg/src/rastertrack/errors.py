"""Exception taxonomy for the tracking engine.

Every error raised by the package derives from RasterTrackError so callers
can catch one base class; the CLI maps subclasses onto exit codes.
"""


class RasterTrackError(Exception):
    """Base class for all engine errors."""


class ParseError(RasterTrackError):
    """Malformed input file (CSV/JSON); message carries file and line."""


class FormatError(RasterTrackError):
    """Binary or tabular container violates its declared layout."""


class CalibrationError(RasterTrackError):
    """Camera calibration is structurally invalid (ids, H, FOV)."""


class ProjectionError(RasterTrackError):
    """Homography projection degenerated (point at infinity)."""


class MapError(RasterTrackError):
    """Raster map construction failed (empty walkable mask, bad geometry)."""


class OffMapError(RasterTrackError):
    """World coordinate falls outside the raster grid."""


class DegenerateRasterError(RasterTrackError):
    """Local probability raster has no walkable support."""


class ModelError(RasterTrackError):
    """Camera transfer model cannot be built (isolated node, bad weights)."""


class NormError(RasterTrackError):
    """Vector with (near-)zero norm where a direction is required."""


class DimError(RasterTrackError):
    """Vector dimensionality mismatch."""


class OrderError(RasterTrackError):
    """Temporal ordering violated (non-increasing frame index)."""


class EmptyBankError(RasterTrackError):
    """Operation requires a non-empty feature/query bank."""


class NumericError(RasterTrackError):
    """Non-finite values appeared in a numeric pipeline stage."""


class DegenerateError(RasterTrackError):
    """Metric or score undefined on this input (e.g. empty ground truth)."""


class EvalError(RasterTrackError):
    """Evaluation inputs are inconsistent (camera sets differ, ...)."""


class SpecError(RasterTrackError):
    """Scenario or config specification is invalid."""


class UsageError(RasterTrackError):
    """Command line misuse."""


class InternalError(RasterTrackError):
    """Invariant violated inside the engine; always a bug."""
