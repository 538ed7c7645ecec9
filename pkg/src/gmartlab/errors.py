"""Exception hierarchy shared by all modules."""


class GmartError(Exception):
    """Base class for every error raised by gmartlab."""


class InvalidArgument(GmartError, ValueError):
    pass


class DomainError(GmartError, ValueError):
    """A value fell outside its mathematical domain (band violation, non-finite sample)."""


class GridMismatchError(GmartError, ValueError):
    pass


class CoverageError(GmartError, ValueError):
    """A level grid does not cover the sampled path range."""


class CapacityError(GmartError, MemoryError):
    pass


class DiagnosticError(GmartError, RuntimeError):
    """A fit or estimate is degenerate and cannot be interpreted."""


class ConfigError(GmartError, ValueError):
    pass
