"""Exception hierarchy shared by all modules."""


class PulseFocusError(Exception):
    pass


class InvalidParameterError(PulseFocusError, ValueError):
    pass


class RegimeError(PulseFocusError, ValueError):
    """Parameters fall outside the hypotheses of the result being used."""


class DomainError(PulseFocusError, ValueError):
    pass


class ValidityError(PulseFocusError, ValueError):
    """An approximation was requested outside its domain of validity."""


class BlowUpError(PulseFocusError, ArithmeticError):
    """Raised when an explicit formula or the solver meets a singularity.

    ``where`` holds the offending (t, r) for closed forms, ``bracket`` the
    time bracket for the solver.
    """

    def __init__(self, message, where=None, bracket=None):
        super().__init__(message)
        self.where = where
        self.bracket = bracket


class FitError(PulseFocusError):
    pass


class ConfigError(PulseFocusError, ValueError):
    pass
