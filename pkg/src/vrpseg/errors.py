"""Exception hierarchy shared by every vrpseg module."""


class VrpSegError(Exception):
    """Base class for all package errors."""


class EmptyMask(VrpSegError):
    pass


class ShapeMismatch(VrpSegError):
    pass


class ZeroVector(VrpSegError):
    pass


class NonFiniteInput(VrpSegError):
    pass


class KOutOfRange(VrpSegError):
    pass


class InsufficientForeground(VrpSegError):
    pass


class BadShape(VrpSegError):
    pass


class MissingPrototype(VrpSegError):
    pass


class OutOfBounds(VrpSegError):
    pass


class EmptyAfterThreshold(VrpSegError):
    pass


class NonBinaryGT(VrpSegError):
    pass


class ClassMismatch(VrpSegError):
    pass


# data errors (CLI exit code 3)
class DataError(VrpSegError):
    pass


class UnknownFold(DataError):
    pass


class InsufficientItems(DataError):
    pass


class EmptyClass(DataError):
    pass


class MissingFile(DataError):
    pass


class CorruptManifest(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptTensor(DataError):
    pass


# config errors (CLI exit code 2)
class BadConfig(VrpSegError):
    pass


class DivergedLoss(VrpSegError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message, step=None, dump_path=None):
        super().__init__(message)
        self.step = step
        self.dump_path = dump_path
