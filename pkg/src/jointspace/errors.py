"""Exception hierarchy shared by every subsystem.

Each class carries the CLI exit code it maps to: 2 for usage, config and
file-format problems, 3 for numerical failures.
"""


class JointSpaceError(Exception):
    exit_code = 2


class ConfigInvalid(JointSpaceError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DimMismatch(JointSpaceError, ValueError):
    pass


class FormatError(JointSpaceError):
    pass


class ShapeError(JointSpaceError):
    pass


class UnknownSample(JointSpaceError, IndexError):
    pass


class BadK(JointSpaceError, ValueError):
    pass


class EmptyBank(JointSpaceError, ValueError):
    pass


class EmptySplit(JointSpaceError, ValueError):
    pass


class EmptyTemplateSet(JointSpaceError, ValueError):
    pass


class NoRelevantItems(JointSpaceError, ValueError):
    pass


class TooFewPoints(JointSpaceError, ValueError):
    pass


class NotNormalized(JointSpaceError, ValueError):
    pass


class NonScalarLoss(JointSpaceError, ValueError):
    pass


class NumericalError(JointSpaceError, ArithmeticError):
    exit_code = 3


class NearZeroNorm(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
