"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the physically meaningful domain."""


class HistogramParseError(ValueError):
    """Malformed histogram text. ``lineno`` is 1-based, or None for whole-file problems."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class FitError(RuntimeError):
    """A fit did not converge. ``best`` holds the last parameter iterate (dict) if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateModelError(FitError):
    """The data carry no information about the model parameters (flat or empty signal)."""
