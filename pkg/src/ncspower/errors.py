"""Exception types shared across the package."""


class NcsError(Exception):
    """Base class for all package-specific errors."""


class NonDiagonalizable(NcsError):
    """Matrix is defective or too close to defective to diagonalize reliably."""


class NoConvergence(NcsError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateSpectrum(NcsError):
    """Eigenvalue configuration outside the domain of the closed forms."""


class InfeasibleRates(NcsError):
    """No integer rate allocation satisfies the per-mode rate constraints."""

    def __init__(self, message, mode_index):
        super().__init__(message)
        self.mode_index = mode_index


class GainUnstable(NcsError):
    """Computed feedback gain does not give a norm-contractive closed loop."""


class Unsupported(NcsError):
    """Operation restricted to low plant dimension was called with d too large."""


class TargetUnreachable(NcsError):
    """A sweep's power-matching bisection could not hit the requested target."""


class ConfigError(NcsError):
    """Simulation configuration failed validation."""
