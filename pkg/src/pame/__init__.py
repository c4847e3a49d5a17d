"""Seed-reproducible simulator for decentralized federated learning with
partial message exchange (PaME), plus a dense D-PSGD baseline."""

from pame.errors import (
    BipartiteOrDisconnected,
    ConfigError,
    DimensionMismatch,
    DuplicateSender,
    EmptyBatch,
    InvalidDimension,
    InvalidSize,
    InvalidTopology,
    NonFiniteValue,
    NotConnected,
    NotStochastic,
    NotSymmetric,
    PameError,
    TooFewPoints,
    UnknownOracle,
)

__version__ = "0.1.0"

__all__ = [
    "BipartiteOrDisconnected",
    "ConfigError",
    "DimensionMismatch",
    "DuplicateSender",
    "EmptyBatch",
    "InvalidDimension",
    "InvalidSize",
    "InvalidTopology",
    "NonFiniteValue",
    "NotConnected",
    "NotStochastic",
    "NotSymmetric",
    "PameError",
    "TooFewPoints",
    "UnknownOracle",
]
