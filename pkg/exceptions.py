"""
Exception hierarchy for sharpbench
"""


class SharpBenchError(Exception):
    """Base class for every error raised by sharpbench"""


class ConfigError(SharpBenchError):
    """Invalid configuration key, value or file"""


class PreconditionError(SharpBenchError, ValueError):
    """An argument lies outside the range an operation accepts"""


class DimensionError(SharpBenchError):
    """Operand shapes do not conform"""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = ' vs '.join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {rendered}")


class NumericError(SharpBenchError):
    """A non-finite value appeared in a forward or backward pass"""

    def __init__(self, op: str, phase: str = 'forward'):
        self.op = op
        self.phase = phase
        super().__init__(f"non-finite value produced by {op} during {phase}")


class GraphError(SharpBenchError):
    """Misuse of the computation graph (non-scalar loss, consumed graph)"""


class DataError(SharpBenchError):
    """Dataset construction or ingestion failure"""


class IdxFormatError(DataError):
    """IDX file with an unexpected magic number"""

    def __init__(self, path: str, observed: int, expected: int):
        self.observed = observed
        super().__init__(
            f"{path}: bad IDX magic 0x{observed:08x} (expected 0x{expected:08x})"
        )


class IdxTruncatedError(DataError):
    """IDX file shorter than its header promises"""


class IdxCountMismatchError(DataError):
    """Image and label IDX files disagree on the item count"""


class CheckpointError(SharpBenchError):
    """Unreadable or inconsistent checkpoint file"""


class TrainingAborted(SharpBenchError):
    """A run stopped on a numeric failure"""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"training aborted at step {step}: {cause}")
