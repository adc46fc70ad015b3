class QVIError(Exception):
    """Base class for solver-side failures."""


class ProblemError(QVIError, ValueError):
    """A problem instance violates a hard precondition."""


class EmptyTransactionSetError(ProblemError):
    def __init__(self, t, x):
        self.t = t
        self.x = x
        super().__init__(f"empty transaction set Z(t={t}, x={list(map(float, x))})")


class MonotonicityError(QVIError):
    """Assembled operator has a negative off-diagonal entry."""

    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class ConvergenceError(QVIError):
    def __init__(self, message, residual=None, history=None):
        self.residual = residual
        self.history = list(history or [])
        super().__init__(message)


class ConfigError(QVIError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


class ChecksumError(QVIError):
    pass
