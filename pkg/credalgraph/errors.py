class CredalGraphError(Exception):
    """
    Base class for all errors raised deliberately by this package
    """


class ConfigError(CredalGraphError):
    """
    A run config (or one of its sections) failed validation. Maps to exit code 2
    """


class DatasetError(CredalGraphError):
    pass


class ShapeError(CredalGraphError, ValueError):
    pass


class NonFiniteError(CredalGraphError, ArithmeticError):
    pass


class InfeasibleCredalSetError(CredalGraphError, ValueError):
    pass


class CheckpointError(CredalGraphError):
    pass


class TrainingError(CredalGraphError):
    def __init__(self, message: str, epoch_dump: list[dict] = ()):
        super().__init__(message)

        # Per-epoch records up to and including the failing epoch
        self.epoch_dump: list[dict] = list(epoch_dump)
