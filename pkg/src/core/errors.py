class ReidError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ReidError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes, detail=None):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {shown}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class DomainError(ReidError, ValueError):
    """An operation was evaluated outside its mathematical domain."""

    def __init__(self, op, reason):
        self.op = op
        super().__init__(f"{op}: {reason}")


class ContractError(ReidError, ValueError):
    """A documented precondition of an operation does not hold."""


class ConfigError(ReidError, ValueError):
    """Invalid configuration, data layout or split."""


class TrainingAbortError(ReidError, RuntimeError):
    """Training cannot continue, e.g. because a loss became non-finite."""

    def __init__(self, component, batch_index, message=None):
        self.component = component
        self.batch_index = batch_index
        text = message or f"non-finite value in loss component '{component}'"
        super().__init__(f"{text} at batch {batch_index}")
