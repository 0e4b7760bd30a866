"""Exception types shared across the package."""


class BBMLabError(Exception):
    pass


class DomainError(BBMLabError, ValueError):
    """Argument outside the domain where a formula is defined."""


class NonSupercritical(BBMLabError, ValueError):
    pass


class ConfigError(BBMLabError, ValueError):
    pass


class ExplosionGuard(BBMLabError, RuntimeError):
    """Particle count exceeded the configured cap."""


class InsufficientSamples(BBMLabError, ValueError):
    pass


class InsufficientHorizon(BBMLabError, ValueError):
    pass


class NoConvergence(BBMLabError, RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class QuadratureFailure(BBMLabError, RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class DegenerateEpoch(BBMLabError, RuntimeError):
    """The population died out during a barrier epoch."""


class ExtinctionError(BBMLabError, RuntimeError):
    pass
