"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent."""


class SvdConvergenceError(RuntimeError):
    """Raised when the bidiagonal QR iteration stalls on a singular value."""

    def __init__(self, index, iterations):
        super().__init__(
            f"singular value {index} did not converge after {iterations} QR sweeps"
        )
        self.index = index
        self.iterations = iterations


class FormatError(ValueError):
    """A data file is malformed. ``offset`` is the byte (or line) where parsing failed."""

    def __init__(self, message, offset=None):
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")
        self.offset = offset


class SolverError(RuntimeError):
    """The inner linear solve broke down. ``trace`` holds per-iteration diagnostics."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
