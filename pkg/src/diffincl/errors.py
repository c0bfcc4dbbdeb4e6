"""Exception hierarchy shared by the expression language, kernels and solvers."""


class DiffInclError(Exception):
    """Base class for all package errors."""


class ExprError(DiffInclError):
    pass


class ParseError(ExprError):
    """Malformed expression text. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.message = message
        self.offset = offset


class UnknownFunctionError(ParseError):
    pass


class UnboundVariableError(ExprError):
    def __init__(self, name):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of an operation (log of non-positive, 1/0, ...)."""


class NonSmoothError(ExprError):
    """Derivative requested at a kink of abs/sign/min/max."""


class FieldError(DiffInclError):
    pass


class CoverError(FieldError):
    """Sign patterns of the pieces do not cover {-,+}^J exactly once."""


class DimensionError(FieldError):
    pass


class OnSurfaceError(FieldError):
    """Single-valued evaluation requested on a switching surface."""


class SolverError(DiffInclError):
    pass


class StepUnderflowError(SolverError):
    def __init__(self, t, h):
        super().__init__(f"step size underflow at t={t!r} (h={h!r})")
        self.t = t
        self.h = h


class ChatteringError(SolverError):
    def __init__(self, t, count):
        super().__init__(
            f"chattering: {count} switching events within one time unit before t={t!r}"
        )
        self.t = t
        self.count = count


class HigherIndexSlidingError(SolverError):
    """Several switching surfaces active at once; not handled."""


class DegenerateBoundaryError(DiffInclError):
    def __init__(self, point, grad_norm):
        super().__init__(
            f"degenerate boundary: |dF| = {grad_norm:.3e} at {list(point)!r}"
        )
        self.point = point
        self.grad_norm = grad_norm


class ConfigError(DiffInclError):
    pass
