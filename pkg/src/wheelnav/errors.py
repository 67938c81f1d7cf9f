"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
1 for usage/config problems, 2 for data problems, 3 for numeric divergence.
"""


class WheelNavError(Exception):
    exit_code = 1


class ConfigError(WheelNavError, ValueError):
    exit_code = 1


class InvalidArgumentError(WheelNavError, ValueError):
    exit_code = 1


class UsageError(WheelNavError, RuntimeError):
    exit_code = 1


class ShapeError(WheelNavError, ValueError):
    exit_code = 2


class DataError(WheelNavError):
    exit_code = 2


class EmptyInputError(DataError, ValueError):
    pass


class FrameMismatchError(DataError, ValueError):
    pass


class InvalidStateError(DataError, ValueError):
    pass


class SchemaError(DataError, ValueError):
    pass


class OrderingError(DataError, ValueError):
    pass


class SyncError(DataError, RuntimeError):
    pass


class ContiguityError(DataError, ValueError):
    pass


class DivergenceError(WheelNavError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
