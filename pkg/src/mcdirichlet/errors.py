"""Exception and warning types shared across the package."""


class MCDirichletError(Exception):
    """Base class for package errors."""


class UnsupportedKind(MCDirichletError):
    """Operation is not defined for this kind of measure."""


class DivergentIntegral(MCDirichletError):
    """A singular integral failed to show Cauchy behaviour under refinement."""


class OutOfCache(MCDirichletError):
    """Point lies outside a cached lattice."""


class SingularPoint(MCDirichletError):
    """Kernel evaluated at (numerically) coincident points."""


class NonFiniteState(MCDirichletError):
    """A simulated state became NaN or infinite."""


class NoContraction(MCDirichletError):
    """Measured contraction factor is >= 1, the Neumann series cannot converge."""


class NonConvergence(MCDirichletError):
    """Iterative linear solve stalled before reaching its residual target."""


class ConfigError(MCDirichletError):
    """Invalid run configuration."""


class GaugeDivergenceWarning(UserWarning):
    """The exponential weights e^{L_tau} look heavy tailed."""
