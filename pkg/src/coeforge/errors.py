"""Exception taxonomy shared across the package.

Every error raised by the library derives from :class:`CoeError` so callers
can catch the whole family or individual conditions.
"""


class CoeError(Exception):
    """Base class for all coeforge errors."""


class DegenerateBox(CoeError):
    """Box has zero or negative width/height (x1 >= x2 or y1 >= y2)."""


class NegativeCoordinate(CoeError):
    """Box coordinate is negative."""


class EmptyAfterClamp(CoeError):
    """Box lies entirely outside the page it was clamped to."""


class EmptyGroundTruth(CoeError):
    """Gold answer normalizes to zero tokens."""


class DimensionMismatch(CoeError):
    """Vector dimensions or image dimensions do not agree."""


class ZeroVector(CoeError):
    """Vector has no direction (all-zero), so it cannot be normalized."""


class ProviderUnavailable(CoeError):
    """Encoder backend could not produce an embedding (after retry)."""


class PageOutOfRange(CoeError):
    """Evidence references a page index outside the candidate page set."""


class GroupTooSmall(CoeError):
    """Advantage normalization needs at least two rollouts."""


class UnresolvedQueryId(CoeError):
    """Prediction references a query id absent from the evaluation set."""


class InsufficientCandidates(CoeError):
    """Not enough retrieved pages to build a candidate set."""


class UnserializableTrajectory(CoeError):
    """Trajectory cannot be rendered back into the response grammar."""


class DecodeError(CoeError):
    """Page content could not be loaded or decoded."""


class SchemaError(CoeError):
    """Input file violates its declared schema."""
