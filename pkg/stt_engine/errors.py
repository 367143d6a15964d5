class SttCubeError(Exception):
    """Base class for engine errors."""


class ConfigurationError(SttCubeError):
    """Invalid engine configuration (empty taxonomy, zero-area member, bad budget)."""


class TaxonomyError(ConfigurationError):
    """A taxonomy file is malformed or inconsistent."""


class SchemaMismatchError(SttCubeError):
    """An update or load does not match the cube's schema or format version."""


class QueryValidationError(SttCubeError):
    """A query cannot be evaluated against the cube as specified."""


class IngestError(SttCubeError):
    """Unrecoverable failure while reading a record stream."""


class StorageError(SttCubeError):
    """Persisting or loading a cube directory failed."""


class BenchmarkError(SttCubeError):
    """Strategies disagree on an exact result."""
