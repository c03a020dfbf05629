"""Package-wide exception types."""


class IntegrationBlowUp(RuntimeError):
    """Raised when an ODE trajectory leaves the finite range.

    Carries the time at which the first non-finite sample appeared.
    """

    def __init__(self, t: float, message: str = ""):
        self.t = float(t)
        super().__init__(message or f"state became non-finite at t={t:.6g}")


class DegenerateWindowError(ValueError):
    """Local fit window holds too few samples for the requested degree."""

    def __init__(self, t0: float, count: int, needed: int):
        self.t0 = float(t0)
        self.count = int(count)
        super().__init__(
            f"window at t0={t0:.6g} has {count} usable samples, needs >= {needed}"
        )


class SolverFailure(RuntimeError):
    """Iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, gap: float | None = None):
        self.gap = gap
        super().__init__(message)


class SelectionFailure(RuntimeError):
    """No admissible hyperparameter found on the candidate grid.

    ``trace`` holds whatever probe evaluations completed before the failure.
    """

    def __init__(self, message: str, trace: list | None = None):
        self.trace = trace if trace is not None else []
        super().__init__(message)


class AggregationFailure(RuntimeError):
    """Every realization of a cell was excluded, so no statistics exist."""

    def __init__(self, cell: str, message: str = ""):
        self.cell = str(cell)
        super().__init__(message or f"all records excluded for cell {self.cell!r}")
