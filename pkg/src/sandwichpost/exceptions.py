"""Exception types shared across the package."""


class SandwichPostError(Exception):
    """Base class for all package errors."""


class NumericDomainError(SandwichPostError):
    """Input contains non-finite or otherwise inadmissible values."""


class NotSpdError(SandwichPostError):
    """A matrix required to be symmetric positive definite is not."""


class EvaluationError(SandwichPostError):
    """A likelihood term evaluated to a non-finite value.

    Carries the (term_id, time_id) pair of the offending term when known.
    """

    def __init__(self, message, term_id=None, time_id=None):
        super().__init__(message)
        self.term_id = term_id
        self.time_id = time_id


class EmptyCompositeError(SandwichPostError):
    """A composite likelihood ended up with no positive-weight terms."""


class ConfigurationError(SandwichPostError):
    """An experiment or simulation was configured inconsistently."""
