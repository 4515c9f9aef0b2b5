"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3.
"""


class InvalidInputError(ValueError):
    """An operation received data violating its preconditions."""


class ConfigurationError(ValueError):
    """A model, spec, or experiment configuration is inconsistent."""


class NumericalError(RuntimeError):
    """A computation produced NaN/Inf or otherwise diverged.

    Carries a ``diagnostics`` dict (iteration index, offending quantity)
    so failures in long training runs are attributable.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
