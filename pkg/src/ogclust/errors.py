"""Exception hierarchy shared by every module."""


class OgClustError(Exception):
    """Base class for all package errors."""


class ValidationError(OgClustError, ValueError):
    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class NumericalError(OgClustError, FloatingPointError):
    """A likelihood or responsibility evaluation went non-finite."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class EmptyClusterError(OgClustError):
    def __init__(self, message, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class DegenerateFitError(OgClustError):
    pass


class NonConvergenceError(OgClustError):
    """Iteration cap hit; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class NoRootError(OgClustError):
    pass


class IllPosedError(OgClustError):
    pass


class FitFailure(OgClustError):
    """Every restart failed. ``diagnostics`` holds one entry per restart."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])
