"""Exception hierarchy shared by every module."""


class CPSError(Exception):
    """Base class for all package errors."""


class ValidationError(CPSError, ValueError):
    """Input failed a precondition (shape, membership, finiteness)."""


class RangeError(ValidationError):
    """A value fell outside its schema bounds."""


class ConfigurationError(CPSError):
    """Catalog, schema, model or parameter configuration is unusable."""


class IntegrityError(CPSError):
    """A digest chain or composite failed verification."""


class StorageError(CPSError):
    """The backing registry or store is unavailable."""


class LowConfidenceError(CPSError):
    """Classification confidence is below the minting gate."""


class UnknownAssetError(CPSError, LookupError):
    """No Mint exists for the requested identity."""


class UniquenessViolation(CPSError):
    """A second Mint (or a double transfer) for one identity was attempted."""


class AuthorizationError(CPSError, PermissionError):
    """The actor is not allowed to perform the operation."""
