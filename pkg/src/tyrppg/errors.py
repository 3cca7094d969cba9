"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform for an operation."""

    def __init__(self, op, lhs, rhs, detail=""):
        self.op = op
        self.lhs = tuple(lhs)
        self.rhs = tuple(rhs)
        msg = f"{op}: incompatible shapes {self.lhs} and {self.rhs}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TapeError(RuntimeError):
    """Base class for gradient-tape misuse."""


class NoTapeError(TapeError):
    """backward() was called on a tensor that is not connected to a tape."""


class TapeConsumedError(TapeError):
    """backward() was called twice on the same output without a new forward pass."""


class NonFiniteError(ArithmeticError):
    """A computation produced NaN or infinity where finite values are required.

    `context` carries whatever locates the failure (coordinate index,
    epoch/batch numbers, ...).
    """

    def __init__(self, msg, **context):
        super().__init__(msg)
        self.context = context
