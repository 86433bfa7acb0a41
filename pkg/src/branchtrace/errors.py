"""Exception hierarchy shared across the package."""


class BranchTraceError(Exception):
    """Base class for every error raised by branchtrace."""


class NotPositiveDefinite(BranchTraceError):
    pass


class NoConvergence(BranchTraceError):
    def __init__(self, max_iter, estimate=None):
        super().__init__(f"power iteration did not converge in {max_iter} iterations")
        self.max_iter = max_iter
        self.estimate = estimate


class NoRoot(BranchTraceError):
    pass


class DegenerateEigenfunction(BranchTraceError):
    pass


class SingularNormalEquations(BranchTraceError):
    pass


class NonConvergence(BranchTraceError):
    """A solve finished without meeting its tolerance; ``report`` says why."""

    def __init__(self, message, report=None, result=None):
        super().__init__(message)
        self.report = report
        self.result = result


class NodalSolution(BranchTraceError):
    pass


class BootstrapFailed(BranchTraceError):
    pass


class CorrectorFailed(BranchTraceError):
    pass


class NoFold(BranchTraceError):
    pass


class InvalidConfig(BranchTraceError):
    pass
