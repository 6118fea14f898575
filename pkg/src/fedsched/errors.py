"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid scenario, preset, config key, or parameter value."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (bad shape, bad index, ...)."""


class StaleEncodingError(ContractViolation):
    """An agnostic action names a condition no device currently occupies."""


class DegenerateRoundError(ValueError):
    """A federation round has no usable weight mass (all counts zero)."""


class TrainingDivergence(RuntimeError):
    """A training step produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
