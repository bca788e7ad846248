"""Exception hierarchy shared by every vauth module."""


class VAuthError(Exception):
    """Base class for all library errors."""


class InvalidCutoff(VAuthError, ValueError):
    pass


class DegenerateSignal(VAuthError, ValueError):
    """Raised for all-zero or otherwise unusable input signals."""


class AlignmentFailed(VAuthError):
    pass


class EnvelopeMismatch(VAuthError, ValueError):
    pass


class SegmentTooShort(VAuthError, ValueError):
    pass


class NoPitch(VAuthError, ValueError):
    pass


class NoSurvivingSegments(VAuthError):
    pass


class DegenerateTrainingSet(VAuthError, ValueError):
    pass


class ModelFormatError(VAuthError):
    pass


class InputError(VAuthError, ValueError):
    """Pipeline inputs that cannot be matched at all (empty, silent, too short)."""


class InvalidConfig(VAuthError, ValueError):
    pass


class SignalTooShort(VAuthError, ValueError):
    pass


class BoundInapplicable(VAuthError, ValueError):
    pass


class ProtocolError(VAuthError):
    """The gateway peer answered with an error frame or a malformed frame."""

    def __init__(self, code, message=""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class ConnectError(VAuthError, ConnectionError):
    """The gateway could not be reached or the connection dropped."""
