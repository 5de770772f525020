class IDDMError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(IDDMError, ValueError):
    """Input failed a structural or numerical invariant."""


class SupportMismatchError(IDDMError, ValueError):
    """A divergence was requested where the reference has no mass."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class PreconditionError(IDDMError):
    """A theorem check was called on an instance outside its hypotheses."""

    def __init__(self, message, measured=None):
        super().__init__(message)
        self.measured = measured
