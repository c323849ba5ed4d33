"""Exception hierarchy shared by every module.

Validation errors map to CLI exit code 1, everything else to 2.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class UnknownTitleError(ValidationError):
    def __init__(self, raw: str, where: str = ""):
        self.raw = raw
        super().__init__(f"{where}unknown job title: {raw!r}")


class CheckpointError(ValidationError):
    """Checkpoint is unreadable, truncated, of another format version, or mismatched."""


class DimensionError(ValueError):
    def __init__(self, op: str, *shapes):
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class TrainingError(RuntimeError):
    def __init__(self, step: int, batch: int, loss: float):
        self.step = step
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step} (batch {batch})")
