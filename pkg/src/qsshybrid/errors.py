"""Exception types shared across the simulator."""


class CaseValidationError(ValueError):
    """Raised when a case or schedule document fails validation.

    All problems found are collected in ``errors`` rather than stopping at the
    first one.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NewtonFailure(RuntimeError):
    """Newton iteration did not converge."""


class ManifoldSolveError(RuntimeError):
    """The fast/algebraic system could not be solved on the constraint manifold."""


class NoEquilibriumError(RuntimeError):
    """No equilibrium was found from the supplied guess."""


class CheckpointMissing(RuntimeError):
    """The rollback rule asked for a checkpoint that was never recorded."""
