class ValidationError(ValueError):
    """Input violates a documented precondition."""


class NotSeparableError(ValidationError):
    pass


class InsufficientClustersError(RuntimeError):
    """Fewer than K mutually separated extreme rows were found.

    ``partial`` holds the rows accepted before the scan ran out.
    """

    def __init__(self, message, partial=()):
        super().__init__(message)
        self.partial = list(partial)


class RecoveryError(RuntimeError):
    """A pipeline stage failed; ``diagnostics`` carries what was done so far."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics if diagnostics is not None else {}
