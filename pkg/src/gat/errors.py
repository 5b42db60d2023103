"""Exception types shared across the package."""


class GatError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(GatError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(GatError, FloatingPointError):
    """NaN or Inf crossed a graph boundary."""


class GraphError(GatError, RuntimeError):
    """Misuse of the differentiation graph (non-scalar loss, consumed graph,
    leaf not reachable)."""


class GateError(GatError, RuntimeError):
    """A pretraining quality gate failed.  Carries the training curves so the
    failure can be inspected."""

    def __init__(self, msg, curves=None):
        super().__init__(msg)
        self.curves = curves or {}


class AttackError(GatError, RuntimeError):
    """Attack aborted (for example on a NaN gradient)."""


class ConfigError(GatError, ValueError):
    """Invalid run configuration.  `path` points at the offending field."""

    def __init__(self, msg, path=""):
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)
