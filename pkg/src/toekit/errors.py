"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, InfeasibleError and
CapError -> 3, OSError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, fabric description, or generator spec."""


class FabricError(ConfigError):
    """Structurally invalid physical fabric or dimension mismatch."""


class InfeasibleError(RuntimeError):
    """A solve has no feasible solution (unroutable demand, violated bounds)."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class CapError(ValueError):
    """Instance exceeds a desk-scale cap enforced by an oracle or pipeline."""


class SolverFailure(RuntimeError):
    """An internal LP/QP solve failed unexpectedly."""
