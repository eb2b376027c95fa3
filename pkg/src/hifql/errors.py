"""Exception types shared across the package."""


class HifqlError(Exception):
    """Base class for all hifql errors."""


class ContractViolation(HifqlError, ValueError):
    """A precondition on shapes, arity or parameter ranges was not met."""


class ConfigError(HifqlError, ValueError):
    """A configuration document failed validation."""


class DatasetFormatError(HifqlError, ValueError):
    """A dataset file is malformed, truncated or inconsistent."""


class CheckpointError(HifqlError, ValueError):
    """A checkpoint directory is missing pieces or does not match its manifest."""


class NumericFault(HifqlError, ArithmeticError):
    """A non-finite value appeared where finite values are required.

    ``op`` names the primitive or loss that produced it; ``step`` is the
    training step when the fault is raised by the trainer.
    """

    def __init__(self, op, message=None, step=None):
        self.op = op
        self.step = step
        detail = message or "non-finite value"
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"{op}: {detail}{where}")
