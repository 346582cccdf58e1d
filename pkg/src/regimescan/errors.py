"""Exception and warning types raised across regimescan."""


class RegimeScanError(Exception):
    """Base class for all library errors."""


class InputError(RegimeScanError, ValueError):
    pass


class ConfigError(RegimeScanError, ValueError):
    pass


class DegenerateNeighborhoodError(RegimeScanError):
    """Local cross-product matrix is singular even after the ridge fallback."""

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"degenerate local design at target index {self.index}")


class InsufficientSupportError(RegimeScanError):
    pass


class OversmoothError(RegimeScanError):
    """tr(S) >= n - 2: the bandwidth is too small for the corrected AIC."""


class BandwidthSearchError(RegimeScanError):
    pass


class DegeneratePoolError(RegimeScanError):
    pass


class DesignError(RegimeScanError):
    pass


class ComparisonError(RegimeScanError):
    pass


class SynthError(RegimeScanError):
    pass


class IoError(RegimeScanError, OSError):
    pass


class ConvergenceWarning(UserWarning):
    pass


class BoundaryWarning(UserWarning):
    pass


class SEUnavailableWarning(UserWarning):
    pass
