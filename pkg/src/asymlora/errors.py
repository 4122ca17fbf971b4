"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when matrix operands do not conform."""

    def __init__(self, op: str, *shapes: tuple[int, int]):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(f"{r}x{c}" for r, c in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or mismatched checkpoint file."""


class DatasetFormatError(RuntimeError):
    """Corrupt or truncated dataset export file."""


class CacheMismatch(RuntimeError):
    """Backward called with a forward cache from a different batch."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered during training."""

    def __init__(self, step: int, task: int, loss: float):
        self.step = step
        self.task = task
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step} (task {task})")
