"""Exception types raised by the simulator."""


class DimensionError(ValueError):
    """Array shapes or index layouts do not fit the configured grid."""


class InfeasibleError(ValueError):
    """A request cannot be satisfied (too many paths, sparsity above Q, ...)."""


class DivergenceError(RuntimeError):
    """A solver produced non-finite state."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
