"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class FitError(RuntimeError):
    """Proposal fitting failed (degenerate covariance or non-finite objective)."""


class InitializationError(RuntimeError):
    """Failure-region search exhausted its radius budget without finding failures."""


class EstimationError(RuntimeError):
    """An importance-sampling update produced a non-finite weight."""


class SimulationError(RuntimeError):
    """An external simulator misbehaved: crash, malformed reply, or timeout."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
