"""Exception types shared across the package."""


class SgcertError(Exception):
    """Base class for all package errors."""


class PreconditionError(SgcertError):
    """An operation was called on input violating its stated precondition."""


class DegenerateStateError(SgcertError):
    """A matrix that must be symmetric positive definite is not."""


class SizeLimitError(SgcertError):
    """Input exceeds a hard combinatorial size limit."""


class MembershipError(SgcertError):
    """A vector claimed to lie in a subspace has residual above tolerance."""


class InconsistentSystemError(SgcertError):
    """A dependency system contradicts its own arrangement numerically."""


class OptimizeTimeoutError(SgcertError):
    """Scaling iteration budget exhausted before convergence or divergence.

    Carries the best state reached so far in ``state``.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class InconclusiveError(SgcertError):
    """Certification step could not decide a branch within its budget.

    Carries a ``diagnostics`` dict describing what was tried.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CertificationError(SgcertError):
    """A certificate failed its own re-verification."""


class BudgetExceededError(SgcertError):
    """Round or wall-clock budget exceeded; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ParseError(SgcertError):
    """A file did not parse; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
