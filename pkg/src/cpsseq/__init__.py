"""Cyberphysical sequencing.

Identify physical assets from sensed attributes and features, bind each to
an immutable identity with a hash-chained provenance bundle, mirror its
state with a sparse-sampling data proxy, and anchor it on a simulated DAG
ledger behind a permissioned asset manager.
"""
from .errors import (
    AuthorizationError,
    ConfigurationError,
    CPSError,
    IntegrityError,
    LowConfidenceError,
    RangeError,
    StorageError,
    UniquenessViolation,
    UnknownAssetError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AuthorizationError", "ConfigurationError", "CPSError", "IntegrityError", "LowConfidenceError", "RangeError",
    "StorageError", "UniquenessViolation", "UnknownAssetError", "ValidationError", "__version__",
]
