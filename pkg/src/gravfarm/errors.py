"""Exception types shared across the package."""


class GravfarmError(Exception):
    """Base class for all package errors."""


class EmptyInput(GravfarmError, ValueError):
    pass


class SingularInteraction(GravfarmError, ArithmeticError):
    """Zero separation with zero softening."""


class DepthLimitExceeded(UserWarning):
    """Coincident bodies forced a leaf past the depth cap.

    Emitted as a warning: the affected bodies share an over-full leaf and the
    tree stays usable.
    """


class InvalidRankCount(GravfarmError, ValueError):
    pass


class OutOfDomain(GravfarmError, ValueError):
    pass


class ForeignNodeOutsideRoot(GravfarmError, ValueError):
    pass


class ProtocolError(GravfarmError):
    """Base class for wire-format failures."""


class BadMagic(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class PayloadTooLarge(ProtocolError):
    pass


class MalformedTask(ProtocolError):
    pass


class DuplicateAddress(GravfarmError):
    pass


class NoIdleServer(GravfarmError):
    """No alive server has a free slot; the scheduler queues instead."""


class NoServersAvailable(GravfarmError):
    pass


class TaskPermanentlyFailed(GravfarmError):
    def __init__(self, task_id, attempts, reason=""):
        super().__init__(f"task {task_id} failed on {attempts} servers: {reason}")
        self.task_id = task_id
        self.attempts = attempts
        self.reason = reason


class LifecycleViolation(GravfarmError):
    pass


class MalformedCsv(GravfarmError, ValueError):
    pass
