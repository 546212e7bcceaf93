"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every numeric failure derives
from :class:`NumericError` and every bad input from :class:`InvalidArgument`.
"""


class InvalidArgument(ValueError):
    pass


class ConfigError(InvalidArgument):
    pass


class NumericError(ArithmeticError):
    pass


class NumericOverflowError(NumericError):
    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"non-finite value in RK4 stage {stage}")


class DivergenceError(NumericError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"trajectory diverged at step {step}")


class RankError(NumericError):
    pass


class IllConditionedError(NumericError):
    def __init__(self, condition, message=None):
        self.condition = condition
        super().__init__(message or f"eigenbasis condition number {condition:.3e} exceeds bound")


class TrainingDiverged(NumericError):
    def __init__(self, component, value, epoch=None):
        self.component = component
        self.value = value
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"loss component '{component}' = {value!r}{where}")


class SamplingError(RuntimeError):
    pass
