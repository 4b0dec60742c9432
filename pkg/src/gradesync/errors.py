"""Shared exception types."""


class ContractViolation(RuntimeError):
    """A runtime state-machine contract was broken.

    Raised for things like reading a clock backwards in hardware time or a
    rate-multiplier update driving the multiplier to zero or below (the
    classic symptom of a step size expressed in the wrong unit system).
    """


class InvalidRegimeError(ValueError):
    """Closed-form expression evaluated outside its region of validity."""
