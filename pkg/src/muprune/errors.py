"""Exception types shared across the package.

Everything that can go wrong in a way a caller might want to catch gets
its own class here; generic ``ValueError`` is reserved for plain bad
arguments at the call site.
"""


class ShapeMismatchError(ValueError):
    """Operands whose shapes cannot be combined. Message names both shapes."""


class AlignmentError(ValueError):
    """A flat per-weight vector does not match the model's parameter layout."""


class UnsupportedModelError(ValueError):
    """Model is outside the family an operation supports (e.g. not convex)."""


class IdxParseError(ValueError):
    """Malformed IDX file. Message carries the byte offset of the problem."""


class NonFiniteActivationError(FloatingPointError):
    """A forward pass produced NaN or infinity."""

    def __init__(self, message: str, layer_index: int):
        super().__init__(message)
        self.layer_index = layer_index


class TrainingDivergedError(ArithmeticError):
    """Training loss became non-finite."""

    def __init__(self, message: str, i_iter: int):
        super().__init__(message)
        self.i_iter = i_iter


class HookError(RuntimeError):
    """An iteration hook raised. Message identifies the failing hook."""


class InsufficientIterationsError(RuntimeError):
    """A weight trace was asked for statistics before its window filled."""


class BootstrapReplicaError(RuntimeError):
    """A bootstrap replica failed to train. ``replica`` is its index."""

    def __init__(self, message: str, replica: int):
        super().__init__(message)
        self.replica = replica


class PruneRoundError(RuntimeError):
    """A round of iterative pruning failed. ``round_index`` locates it."""

    def __init__(self, message: str, round_index: int):
        super().__init__(message)
        self.round_index = round_index
