"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an argument violates a documented precondition."""


class FitFailure(RuntimeError):
    """Fitting diverged (non-finite loss). Retrying with a new seed may help."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NotFittedError(RuntimeError):
    pass


class ConversionError(RuntimeError):
    """A model site has no calibration coverage or no approximator."""

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class StoreVersionError(ValueError):
    pass
