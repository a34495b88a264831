"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a run configuration is malformed or inconsistent."""


class GeometryError(ValueError):
    """Raised on degenerate geometry (coincident points, non-positive distances)."""


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient.

    Carries whatever diagnostic context the caller attached so a partial
    learning record can still be written out.
    """

    def __init__(self, message, diagnostic=None, rows=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
        self.rows = rows or []
