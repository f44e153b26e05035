"""Typed exceptions, mapped one-to-one onto the engine's error taxonomy.

The bindings run in-process, so the mapping is the identity: catching
``coeforge_bindings.errors.PageOutOfRange`` is exactly catching the engine's
own exception.  Training loops only ever need this module.
"""

from coeforge.errors import (
    CoeError,
    DecodeError,
    DegenerateBox,
    DimensionMismatch,
    EmptyAfterClamp,
    EmptyGroundTruth,
    GroupTooSmall,
    InsufficientCandidates,
    NegativeCoordinate,
    PageOutOfRange,
    ProviderUnavailable,
    SchemaError,
    UnresolvedQueryId,
    UnserializableTrajectory,
    ZeroVector,
)

__all__ = [
    "CoeError",
    "DecodeError",
    "DegenerateBox",
    "DimensionMismatch",
    "EmptyAfterClamp",
    "EmptyGroundTruth",
    "GroupTooSmall",
    "InsufficientCandidates",
    "NegativeCoordinate",
    "PageOutOfRange",
    "ProviderUnavailable",
    "SchemaError",
    "UnresolvedQueryId",
    "UnserializableTrajectory",
    "ZeroVector",
]
